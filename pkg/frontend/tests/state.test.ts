// Step-board and view-model behavior, driven by a stream captured from a
// real served session (misplaced first attempt on S1, alarm acknowledged,
// retry passes, 4 fasteners tightened, operator confirm at the end).

import { describe, expect, it } from "vitest";
import fixture from "./fixtures/stream.json";

import {
  apply,
  applyAll,
  canAcknowledge,
  canConfirm,
  emptyModel,
  fromSnapshot,
  showTorquePanel,
  type ViewModel,
} from "../src/state.js";
import type { SessionSnapshot, StreamItem } from "../src/types.js";

const stream = fixture.stream as StreamItem[];
const snapshot = fixture.snapshot as SessionSnapshot;

function replay(upTo?: number): ViewModel {
  return applyAll(emptyModel(), stream.slice(0, upTo));
}

describe("step board over the captured session", () => {
  it("starts with five pending steps after SessionBegin", () => {
    const begin = stream.findIndex(
      (i) => i.type === "event" && i.event.kind === "SessionBegin",
    );
    const model = replay(begin + 1);
    expect(model.steps.map((s) => s.step_id)).toEqual(
      ["S1", "S2", "S3", "S4", "S5"],
    );
    expect(model.steps.every((s) => s.status === "Pending")).toBe(true);
    expect(model.status).toBe("running");
  });

  it("tracks every transition: active step, retry counts, final verdicts", () => {
    let model = emptyModel();
    const activations: string[] = [];
    for (const item of stream) {
      const before = model.activeStepId;
      model = apply(model, item);
      if (model.activeStepId && model.activeStepId !== before) {
        activations.push(model.activeStepId);
      }
    }
    // S1 runs twice (misplaced, then retried after the alarm ack)
    expect(activations).toEqual(["S1", "S1", "S2", "S3", "S4", "S5"]);
    expect(model.status).toBe("complete");
    expect(model.steps.map((s) => s.status)).toEqual(
      ["Passed", "Passed", "Passed", "Passed", "Passed"],
    );
    expect(model.steps[0].attempts).toBe(2);
    expect(model.steps.slice(1).every((s) => s.attempts === 1)).toBe(true);
  });

  it("marks the failed attempt Failed until its retry starts", () => {
    const failedAt = stream.findIndex(
      (i) =>
        i.type === "event" &&
        i.event.kind === "StepResult" &&
        i.event.payload.outcome === "Failed",
    );
    const model = replay(failedAt + 1);
    expect(model.steps[0].status).toBe("Failed");
    expect(model.activeStepId).toBeNull();
  });
});

describe("alarm and light", () => {
  it("shows the alarm with the misplacement reason, then clears on ack", () => {
    const alarmAt = stream.findIndex(
      (i) => i.type === "event" && i.event.kind === "AlarmRaised",
    );
    let model = replay(alarmAt + 1);
    expect(model.alarmReason).toBe("misplaced");
    // the light item accompanies the alarm
    while (model.light !== "Alarm") {
      model = apply(model, stream[model.streamPosition]);
    }
    expect(canAcknowledge(model)).toBe(true);

    const ackedAt = stream.findIndex(
      (i) => i.type === "event" && i.event.kind === "AlarmAcked",
    );
    const after = replay(ackedAt + 1);
    expect(after.alarmReason).toBeNull();
  });

  it("ends with the light idle and no pending controls", () => {
    const model = replay();
    expect(model.light).toBe("Idle");
    expect(canConfirm(model)).toBe(false);
    expect(canAcknowledge(model)).toBe(false);
  });
});

describe("detection overlay data", () => {
  it("exposes the misplaced detection with offset beyond tolerance", () => {
    const firstDetection = stream.findIndex(
      (i) => i.type === "event" && i.event.kind === "Detection",
    );
    const model = replay(firstDetection + 1);
    expect(model.detection?.verdict).toBe("Misplaced");
    expect(model.detection?.offset_px).toBeGreaterThan(model.detection!.tol_px);
  });

  it("settles on a correct detection after the retry", () => {
    const detections = stream.filter(
      (i) => i.type === "event" && i.event.kind === "Detection",
    );
    expect(detections.length).toBe(4); // S1 twice, S2, S4
    const model = replay();
    expect(model.detection?.verdict).toBe("Correct");
  });
});

describe("torque panel", () => {
  it("is hidden outside Tighten steps and visible during them", () => {
    expect(showTorquePanel(replay())).toBe(false);
    const telemetryAt = stream.findIndex((i) => i.type === "telemetry");
    const during = replay(telemetryAt + 1);
    expect(showTorquePanel(during)).toBe(true);
    expect(during.torque?.setpointNm).toBe(2.0);
    expect(during.torque?.bandNm).toBe(0.5);
  });

  it("records one torque per fastener, all inside the band", () => {
    const model = replay();
    const torques = stream
      .filter(
        (i) => i.type === "event" && i.event.kind === "TorqueResult",
      )
      .map((i: any) => i.event.payload.final_torque_mnm);
    expect(torques.length).toBe(4);
    for (const mnm of torques) {
      expect(Math.abs(mnm / 1000 - 2.0)).toBeLessThanOrEqual(0.5);
    }
    expect(model.torque).toBeNull(); // panel cleared after the session
  });

  it("restarts the trace for each fastener", () => {
    let model = emptyModel();
    let maxTrace = 0;
    const traceAtFastener: Record<number, number> = {};
    for (const item of stream) {
      model = apply(model, item);
      if (model.torque) {
        maxTrace = Math.max(maxTrace, model.torque.trace.length);
        traceAtFastener[model.torque.fastenerIndex] =
          model.torque.trace.length;
      }
    }
    expect(Object.keys(traceAtFastener).map(Number).sort()).toEqual(
      [0, 1, 2, 3],
    );
    const telemetryCount = stream.filter((i) => i.type === "telemetry").length;
    expect(maxTrace).toBeLessThan(telemetryCount); // reset between fasteners
  });
});

describe("stream purity / reconnect invariant", () => {
  function comparable(model: ViewModel) {
    const { streamPosition, ...rest } = model;
    return rest;
  }

  it("replaying the stream twice yields identical views", () => {
    expect(comparable(replay())).toEqual(comparable(replay()));
  });

  it("snapshot + full replay equals cold replay", () => {
    const cold = applyAll(emptyModel(), stream);
    const warm = applyAll(fromSnapshot(snapshot), stream);
    expect(comparable(warm)).toEqual(comparable(cold));
  });
});
