// The whole panel is a pure function of (initial snapshot?, stream items).
// apply() never mutates: replaying the same stream always reproduces the
// same view, which is what makes reconnect/replay safe.

import type {
  DetectionInfo,
  Light,
  SessionSnapshot,
  StepKind,
  StepRow,
  StreamItem,
} from "./types.js";

export interface TracePoint {
  t_ms: number;
  torque_nm: number;
}

export interface TorquePanelModel {
  stepId: string;
  setpointNm: number;
  bandNm: number;
  fastenerIndex: number;
  fastenerCount: number;
  trace: TracePoint[];
  recordedMnm: number[];
}

export interface ViewModel {
  sessionId: string | null;
  productSerial: string | null;
  procedureId: string | null;
  status: "created" | "running" | "complete" | "halted";
  light: Light;
  steps: StepRow[];
  activeStepId: string | null;
  activeKind: StepKind | null;
  prompt: string | null;
  detection: DetectionInfo | null;
  torque: TorquePanelModel | null;
  alarmReason: string | null;
  // pressed-but-not-yet-confirmed-by-stream flags (optimistic disable)
  confirmInFlight: boolean;
  ackInFlight: boolean;
  streamPosition: number;
}

export function emptyModel(): ViewModel {
  return {
    sessionId: null,
    productSerial: null,
    procedureId: null,
    status: "created",
    light: "Idle",
    steps: [],
    activeStepId: null,
    activeKind: null,
    prompt: null,
    detection: null,
    torque: null,
    alarmReason: null,
    confirmInFlight: false,
    ackInFlight: false,
    streamPosition: 0,
  };
}

export function fromSnapshot(snap: SessionSnapshot): ViewModel {
  const model = emptyModel();
  model.sessionId = snap.session_id;
  model.productSerial = snap.product_serial;
  model.procedureId = snap.procedure_id;
  model.status = snap.status;
  model.light = snap.light;
  model.steps = snap.steps.map((s) => ({ ...s }));
  model.activeStepId = snap.active_step?.step_id ?? null;
  model.activeKind = snap.active_step?.kind ?? null;
  model.prompt = snap.active_step?.detail?.prompt ?? null;
  model.detection = snap.last_detection;
  if (snap.torque && snap.active_step?.kind === "Tighten") {
    model.torque = {
      stepId: snap.active_step.step_id,
      setpointNm: snap.torque.setpoint_nm,
      bandNm: snap.torque.band_nm,
      fastenerIndex: snap.torque.fastener_index,
      fastenerCount: snap.torque.fastener_count,
      trace: [],
      recordedMnm: [...snap.torque.recorded_mnm],
    };
  }
  return model;
}

function setStep(
  steps: StepRow[],
  stepId: string,
  patch: Partial<StepRow>,
): StepRow[] {
  return steps.map((s) => (s.step_id === stepId ? { ...s, ...patch } : s));
}

export function apply(model: ViewModel, item: StreamItem): ViewModel {
  const next: ViewModel = {
    ...model,
    steps: model.steps,
    streamPosition: model.streamPosition + 1,
  };

  if (item.type === "light") {
    next.light = item.light;
    if (item.light !== "Alarm") next.ackInFlight = false;
    return next;
  }

  if (item.type === "telemetry") {
    const fresh =
      !model.torque ||
      model.torque.stepId !== item.step_id ||
      model.torque.fastenerIndex !== item.fastener_index;
    const base: TorquePanelModel = fresh
      ? {
          stepId: item.step_id,
          setpointNm: item.setpoint_nm,
          bandNm: item.band_nm,
          fastenerIndex: item.fastener_index,
          fastenerCount: model.torque?.fastenerCount ?? 0,
          trace: [],
          recordedMnm: model.torque?.recordedMnm ?? [],
        }
      : model.torque!;
    next.torque = {
      ...base,
      trace: [...base.trace, { t_ms: item.t_ms, torque_nm: item.torque_nm }],
    };
    return next;
  }

  const event = item.event;
  const p = event.payload;
  switch (event.kind) {
    case "SessionBegin":
      next.sessionId = event.session_id;
      next.productSerial = event.product_serial;
      next.procedureId = p.procedure_id;
      next.status = "running";
      if (next.steps.length === 0) {
        next.steps = p.steps.map(
          (s: { step_id: string; kind: StepKind }): StepRow => ({
            step_id: s.step_id,
            kind: s.kind,
            status: "Pending",
            attempts: 0,
          }),
        );
      }
      break;
    case "StepStart":
      next.steps = setStep(model.steps, p.step_id, {
        status: "Active",
        attempts: p.attempt,
      });
      next.activeStepId = p.step_id;
      next.activeKind = p.kind;
      next.prompt = null;
      if (p.kind !== "Tighten") next.torque = null;
      break;
    case "Detection":
      next.detection = p as DetectionInfo;
      break;
    case "TorqueResult":
      if (next.torque) {
        next.torque = {
          ...next.torque,
          recordedMnm: [...next.torque.recordedMnm, p.final_torque_mnm],
          fastenerCount: Math.max(
            next.torque.fastenerCount,
            p.fastener_index + 1,
          ),
        };
      }
      break;
    case "StepResult":
      next.steps = setStep(model.steps, p.step_id, {
        status: p.outcome === "Passed" ? "Passed" : "Failed",
        attempts: p.attempt,
      });
      next.activeStepId = null;
      next.activeKind = null;
      break;
    case "AlarmRaised":
      next.alarmReason = p.reason;
      break;
    case "AlarmAcked":
      next.alarmReason = null;
      next.ackInFlight = false;
      break;
    case "OperatorAction":
      if (p.action === "confirm" || p.action === "auto_confirm") {
        next.confirmInFlight = false;
      }
      break;
    case "SessionEnd":
      next.status = p.outcome === "Completed" ? "complete" : "halted";
      next.activeStepId = null;
      next.activeKind = null;
      next.torque = null;
      break;
  }
  return next;
}

export function applyAll(model: ViewModel, items: StreamItem[]): ViewModel {
  return items.reduce(apply, model);
}

// -- derived controls: the UI can never offer an action the API would 409 --

export function canConfirm(model: ViewModel): boolean {
  return (
    model.status === "running" &&
    model.activeKind === "OperatorConfirm" &&
    !model.confirmInFlight
  );
}

export function canAcknowledge(model: ViewModel): boolean {
  return model.light === "Alarm" && !model.ackInFlight;
}

export function showTorquePanel(model: ViewModel): boolean {
  return model.torque !== null && model.activeKind === "Tighten";
}
