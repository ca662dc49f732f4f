// DOM rendering: every function paints one panel from the view model.

import { buildOverlay } from "./overlay.js";
import type { ViewModel } from "./state.js";
import { canAcknowledge, canConfirm, showTorquePanel } from "./state.js";
import { buildTorqueGeometry } from "./torque.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function renderHeader(model: ViewModel): void {
  el("session-id").textContent = model.sessionId ?? "-";
  el("product-serial").textContent = model.productSerial ?? "-";
  el("procedure-id").textContent = model.procedureId ?? "-";
  const status = el("session-status");
  status.textContent = model.status;
  status.className = `status ${model.status}`;
}

export function renderLight(model: ViewModel): void {
  const light = el("light");
  light.className = `light ${model.light.toLowerCase()}`;
  el("light-label").textContent =
    model.light + (model.alarmReason ? ` - ${model.alarmReason}` : "");
  const ack = el<HTMLButtonElement>("btn-ack");
  ack.hidden = model.light !== "Alarm";
  ack.disabled = !canAcknowledge(model);
}

export function renderBoard(model: ViewModel): void {
  const body = el("board-body");
  body.innerHTML = "";
  for (const step of model.steps) {
    const row = document.createElement("tr");
    row.className =
      step.step_id === model.activeStepId ? "active" : step.status.toLowerCase();
    const attempts = step.attempts > 0 ? String(step.attempts) : "";
    row.innerHTML =
      `<td>${step.step_id}</td><td>${step.kind}</td>` +
      `<td class="st">${step.status}</td><td>${attempts}</td>`;
    body.appendChild(row);
  }
}

export function renderConfirm(model: ViewModel): void {
  const panel = el("confirm-panel");
  const show = model.activeKind === "OperatorConfirm";
  panel.hidden = !show;
  if (show) {
    el("confirm-prompt").textContent =
      model.prompt ?? "Confirm to continue";
    el<HTMLButtonElement>("btn-confirm").disabled = !canConfirm(model);
  }
}

export function renderOverlay(model: ViewModel, frameSrc: string | null): void {
  const panel = el("camera-panel");
  const det = model.detection;
  panel.hidden = det === null;
  if (!det) return;

  const image = el<HTMLImageElement>("camera-frame");
  if (frameSrc && image.getAttribute("src") !== frameSrc) {
    image.setAttribute("src", frameSrc);
  }
  const overlay = buildOverlay(det);
  const svg = el("camera-overlay");
  svg.innerHTML = "";
  for (const box of overlay.boxes) {
    const rect = document.createElementNS(SVG_NS, "rect");
    rect.setAttribute("x", String(box.x));
    rect.setAttribute("y", String(box.y));
    rect.setAttribute("width", String(box.w));
    rect.setAttribute("height", String(box.h));
    rect.setAttribute("class", box.cls);
    svg.appendChild(rect);
  }
  if (overlay.arrow) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(overlay.arrow.x1));
    line.setAttribute("y1", String(overlay.arrow.y1));
    line.setAttribute("x2", String(overlay.arrow.x2));
    line.setAttribute("y2", String(overlay.arrow.y2));
    line.setAttribute("class", "offset-arrow");
    line.setAttribute("marker-end", "url(#arrowhead)");
    svg.appendChild(line);
  }
  const banner = el("camera-banner");
  banner.hidden = overlay.banner === null;
  if (overlay.banner) {
    banner.textContent = overlay.banner.text;
    banner.className = `banner ${overlay.banner.cls}`;
  }
}

export function renderTorque(model: ViewModel): void {
  const panel = el("torque-panel");
  const show = showTorquePanel(model);
  panel.hidden = !show;
  if (!show || !model.torque) return;

  const width = 560;
  const height = 180;
  const geometry = buildTorqueGeometry(model.torque, width, height);
  const svg = el("torque-plot");
  svg.innerHTML = "";

  const band = document.createElementNS(SVG_NS, "rect");
  band.setAttribute("x", String(geometry.bandRect.x));
  band.setAttribute("y", String(geometry.bandRect.y));
  band.setAttribute("width", String(geometry.bandRect.w));
  band.setAttribute("height", String(geometry.bandRect.h));
  band.setAttribute("class", "band");
  svg.appendChild(band);

  const setpoint = document.createElementNS(SVG_NS, "line");
  setpoint.setAttribute("x1", "0");
  setpoint.setAttribute("x2", String(width));
  setpoint.setAttribute("y1", String(geometry.setpointY));
  setpoint.setAttribute("y2", String(geometry.setpointY));
  setpoint.setAttribute("class", "setpoint");
  svg.appendChild(setpoint);

  if (geometry.polyline) {
    const trace = document.createElementNS(SVG_NS, "polyline");
    trace.setAttribute("points", geometry.polyline);
    trace.setAttribute("class", "trace");
    svg.appendChild(trace);
  }
  if (geometry.lastPoint) {
    const dot = document.createElementNS(SVG_NS, "circle");
    dot.setAttribute("cx", String(geometry.lastPoint.x));
    dot.setAttribute("cy", String(geometry.lastPoint.y));
    dot.setAttribute("r", "3");
    dot.setAttribute("class", "trace-head");
    svg.appendChild(dot);
  }

  const t = model.torque;
  el("torque-caption").textContent =
    `fastener ${t.fastenerIndex + 1}/${t.fastenerCount || "?"}  ` +
    `setpoint ${t.setpointNm.toFixed(2)} Nm  band +/-${t.bandNm.toFixed(1)} Nm`;
  el("torque-recorded").textContent = t.recordedMnm.length
    ? "recorded: " +
      t.recordedMnm.map((mnm) => (mnm / 1000).toFixed(3) + " Nm").join(", ")
    : "";
}

export function renderAll(model: ViewModel, frameSrc: string | null): void {
  renderHeader(model);
  renderLight(model);
  renderBoard(model);
  renderConfirm(model);
  renderOverlay(model, frameSrc);
  renderTorque(model);
}
