// Torque-panel geometry: maps the live trace, the setpoint line and the
// +/-0.5 Nm corridor into pixel space for an SVG of the given size.

import type { TorquePanelModel } from "./state.js";

export interface TorqueGeometry {
  bandRect: { x: number; y: number; w: number; h: number };
  setpointY: number;
  polyline: string; // SVG points attribute
  lastPoint: { x: number; y: number } | null;
  tMax: number;
  torqueMax: number;
}

export function buildTorqueGeometry(
  panel: TorquePanelModel,
  width: number,
  height: number,
): TorqueGeometry {
  const torqueMax = Math.max(
    panel.setpointNm + panel.bandNm * 1.5,
    ...panel.trace.map((p) => p.torque_nm),
  );
  const tMax = Math.max(100, ...panel.trace.map((p) => p.t_ms));
  const sx = (t: number) => (t / tMax) * width;
  const sy = (nm: number) => height - (nm / torqueMax) * height;

  const bandTop = sy(panel.setpointNm + panel.bandNm);
  const bandBottom = sy(Math.max(panel.setpointNm - panel.bandNm, 0));
  const points = panel.trace
    .map((p) => `${sx(p.t_ms).toFixed(1)},${sy(Math.max(p.torque_nm, 0)).toFixed(1)}`)
    .join(" ");
  const last = panel.trace[panel.trace.length - 1];

  return {
    bandRect: {
      x: 0,
      y: bandTop,
      w: width,
      h: bandBottom - bandTop,
    },
    setpointY: sy(panel.setpointNm),
    polyline: points,
    lastPoint: last
      ? { x: sx(last.t_ms), y: sy(Math.max(last.torque_nm, 0)) }
      : null,
    tMax,
    torqueMax,
  };
}

export function finalMarkerInsideBand(
  recordedMnm: number[],
  setpointNm: number,
  bandNm: number,
): boolean {
  return recordedMnm.every(
    (mnm) => Math.abs(mnm / 1000 - setpointNm) <= bandNm,
  );
}
