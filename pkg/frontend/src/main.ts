// Panel wiring: snapshot + stream -> model -> render; buttons post through
// the guarded actions and stay disabled until the matching event arrives.

import {
  apiBase,
  fetchSession,
  frameUrl,
  postAcknowledge,
  postConfirm,
  postStartSession,
  subscribe,
} from "./api.js";
import { pressAcknowledge, pressConfirm } from "./actions.js";
import { apply, emptyModel, fromSnapshot, type ViewModel } from "./state.js";
import { renderAll } from "./render.js";

const base = apiBase();
let model: ViewModel = emptyModel();
let frameBust = 0;

function currentFrameSrc(): string | null {
  if (!model.detection) return null;
  return frameUrl(base, model.detection.camera_id, frameBust);
}

function paint(): void {
  renderAll(model, currentFrameSrc());
}

function onStreamItem(item: Parameters<typeof apply>[1]): void {
  const hadDetection = model.detection;
  model = apply(model, item);
  if (model.detection !== hadDetection) {
    frameBust += 1; // a new capture exists server-side; refetch the PNG
  }
  paint();
}

function showStartForm(show: boolean): void {
  document.getElementById("start-panel")!.hidden = !show;
}

async function start(): Promise<void> {
  const statusLine = document.getElementById("connection")!;
  try {
    const snap = await fetchSession(base);
    if (snap === null) {
      statusLine.textContent = "no active session";
      showStartForm(true);
      setTimeout(start, 2000);
      return;
    }
    showStartForm(false);
    model = fromSnapshot(snap);
    paint();
    statusLine.textContent = "live";
    subscribe(base, 0, onStreamItem, () => {
      statusLine.textContent = "stream lost - reconnecting";
    });
  } catch {
    statusLine.textContent = "workcell unreachable - retrying";
    setTimeout(start, 2000);
  }
}

document.getElementById("btn-start")!.addEventListener("click", () => {
  const serial = (
    document.getElementById("start-serial") as HTMLInputElement
  ).value.trim();
  const procedure = (
    document.getElementById("start-procedure") as HTMLInputElement
  ).value.trim();
  const errorLine = document.getElementById("start-error")!;
  if (!serial || !procedure) {
    errorLine.textContent = "serial and procedure path are required";
    return;
  }
  const button = document.getElementById("btn-start") as HTMLButtonElement;
  button.disabled = true;
  void postStartSession(base, serial, procedure).then((result) => {
    button.disabled = false;
    if (result.ok) {
      errorLine.textContent = "";
      showStartForm(false);
      void start();
    } else {
      errorLine.textContent = result.error ?? "failed to start";
    }
  });
});

document.getElementById("btn-confirm")!.addEventListener("click", () => {
  const stepId = model.activeStepId;
  const result = pressConfirm(model, () =>
    stepId ? postConfirm(base, stepId) : Promise.resolve(false),
  );
  model = result.model;
  paint();
  void result.settle.then((ok) => {
    if (!ok) {
      model = { ...model, confirmInFlight: false };
      paint();
    }
  });
});

document.getElementById("btn-ack")!.addEventListener("click", () => {
  const result = pressAcknowledge(model, () => postAcknowledge(base));
  model = result.model;
  paint();
  void result.settle.then((ok) => {
    if (!ok) {
      model = { ...model, ackInFlight: false };
      paint();
    }
  });
});

void start();
