// Camera-overlay geometry: pure data in, drawable shapes out. Rendering is
// a thin SVG layer over these.

import type { DetectionInfo } from "./types.js";

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
  cls: "expected" | "detection-ok" | "detection-bad";
}

export interface Arrow {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface OverlayModel {
  boxes: Box[];
  arrow: Arrow | null;
  banner: { text: string; cls: "ok" | "warn" | "missing" } | null;
}

export function regionCenter(
  region: [number, number, number, number],
): [number, number] {
  const [x, y, w, h] = region;
  return [x + (w - 1) / 2, y + (h - 1) / 2];
}

export function buildOverlay(det: DetectionInfo | null): OverlayModel {
  if (!det) return { boxes: [], arrow: null, banner: null };
  const [rx, ry, rw, rh] = det.expected_region;
  const boxes: Box[] = [{ x: rx, y: ry, w: rw, h: rh, cls: "expected" }];

  if (det.verdict === "NotFound") {
    return {
      boxes,
      arrow: null,
      banner: {
        text: `${det.template_id} not detected (best score ${det.score.toFixed(2)})`,
        cls: "missing",
      },
    };
  }

  const detBox: Box = {
    x: det.center[0] - (rw - 1) / 2,
    y: det.center[1] - (rh - 1) / 2,
    w: rw,
    h: rh,
    cls: det.verdict === "Correct" ? "detection-ok" : "detection-bad",
  };
  boxes.push(detBox);

  if (det.verdict === "Correct") {
    return {
      boxes,
      arrow: null,
      banner: {
        text: `${det.template_id} placed correctly (score ${det.score.toFixed(2)})`,
        cls: "ok",
      },
    };
  }

  const [cx, cy] = regionCenter(det.expected_region);
  return {
    boxes,
    arrow: { x1: cx, y1: cy, x2: det.center[0], y2: det.center[1] },
    banner: {
      text:
        `${det.template_id} misplaced by ${det.offset_px?.toFixed(1)} px ` +
        `(tolerance ${det.tol_px} px)`,
      cls: "warn",
    },
  };
}
