// Shapes of the workcell API documents the panel consumes.

export type StepKind =
  | "InstallElement"
  | "Tighten"
  | "Inspect"
  | "OperatorConfirm";

export type StepStatus = "Pending" | "Active" | "Passed" | "Failed" | "Skipped";

export type Light = "Idle" | "Proceed" | "Attention" | "Alarm";

export interface StepRow {
  step_id: string;
  kind: StepKind;
  status: StepStatus;
  attempts: number;
}

export interface DetectionInfo {
  step_id: string;
  template_id: string;
  camera_id: string;
  center: [number, number];
  score: number;
  verdict: "Correct" | "Misplaced" | "NotFound";
  offset_px: number | null;
  expected_region: [number, number, number, number]; // x, y, w, h
  tol_px: number;
}

export interface TorqueInfo {
  setpoint_nm: number;
  band_nm: number;
  fastener_count: number;
  fastener_index: number;
  last_t_ms: number;
  last_torque_nm: number;
  recorded_mnm: number[];
}

export interface SessionSnapshot {
  session_id: string;
  workcell_id: string;
  product_serial: string;
  procedure_id: string;
  status: "created" | "running" | "complete" | "halted";
  light: Light;
  started_ms: number | null;
  ended_ms: number | null;
  active_step: { step_id: string; kind: StepKind; detail: any } | null;
  steps: StepRow[];
  last_detection: DetectionInfo | null;
  torque: TorqueInfo | null;
  event_count: number;
}

export interface WorkEvent {
  event_id: number;
  session_id: string;
  workcell_id: string;
  product_serial: string;
  timestamp_ms: number;
  kind:
    | "SessionBegin"
    | "StepStart"
    | "Detection"
    | "TorqueResult"
    | "OperatorAction"
    | "AlarmRaised"
    | "AlarmAcked"
    | "StepResult"
    | "SessionEnd";
  payload: any;
  media_ref: string | null;
}

export type StreamItem =
  | { type: "event"; event: WorkEvent }
  | { type: "light"; light: Light }
  | {
      type: "telemetry";
      step_id: string;
      fastener_index: number;
      t_ms: number;
      torque_nm: number;
      setpoint_nm: number;
      band_nm: number;
    };
