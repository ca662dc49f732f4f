// Double-click protection: a second press while the first is in flight (or
// after the step passed) never reaches the API, so confirming twice causes
// exactly one state change.

import { describe, expect, it } from "vitest";

import { pressAcknowledge, pressConfirm } from "../src/actions.js";
import {
  apply,
  applyAll,
  canConfirm,
  emptyModel,
  type ViewModel,
} from "../src/state.js";
import type { StreamItem } from "../src/types.js";
import fixture from "./fixtures/stream.json";

const stream = fixture.stream as StreamItem[];

function modelAtConfirmStep(): ViewModel {
  const confirmStart = stream.findIndex(
    (i) =>
      i.type === "event" &&
      i.event.kind === "StepStart" &&
      i.event.payload.kind === "OperatorConfirm",
  );
  return applyAll(emptyModel(), stream.slice(0, confirmStart + 1));
}

describe("confirm idempotency", () => {
  it("double-click posts exactly once", async () => {
    let posts = 0;
    const post = () => {
      posts += 1;
      return Promise.resolve(true);
    };
    let model = modelAtConfirmStep();
    expect(canConfirm(model)).toBe(true);

    const first = pressConfirm(model, post);
    model = first.model;
    const second = pressConfirm(model, post); // immediate double-click
    model = second.model;

    expect(first.posted).toBe(true);
    expect(second.posted).toBe(false);
    expect(posts).toBe(1);
    await first.settle;
  });

  it("the flag clears only when the operator action arrives on the stream", () => {
    let model = modelAtConfirmStep();
    model = pressConfirm(model, () => Promise.resolve(true)).model;
    expect(model.confirmInFlight).toBe(true);
    expect(canConfirm(model)).toBe(false);

    const confirmEvent = stream.find(
      (i) =>
        i.type === "event" &&
        i.event.kind === "OperatorAction" &&
        i.event.payload.action === "confirm",
    )!;
    model = apply(model, confirmEvent);
    expect(model.confirmInFlight).toBe(false);
    // and the step passes right after, so confirm stays unavailable
    const result = stream.find(
      (i) =>
        i.type === "event" &&
        i.event.kind === "StepResult" &&
        i.event.payload.step_id === "S5",
    )!;
    model = apply(model, result);
    expect(canConfirm(model)).toBe(false);
  });

  it("a failed POST re-enables the button", async () => {
    let model = modelAtConfirmStep();
    const press = pressConfirm(model, () => Promise.resolve(false));
    model = press.model;
    const ok = await press.settle;
    expect(ok).toBe(false);
    model = { ...model, confirmInFlight: false }; // what main.ts does
    expect(canConfirm(model)).toBe(true);
  });

  it("confirm is never offered outside an active OperatorConfirm step", () => {
    let model = emptyModel();
    for (const item of stream) {
      model = apply(model, item);
      if (canConfirm(model)) {
        expect(model.activeKind).toBe("OperatorConfirm");
        expect(model.status).toBe("running");
      }
    }
  });
});

describe("acknowledge guard", () => {
  it("is a no-op while the light is not Alarm", () => {
    const model = emptyModel();
    let posts = 0;
    const result = pressAcknowledge(model, () => {
      posts += 1;
      return Promise.resolve(true);
    });
    expect(result.posted).toBe(false);
    expect(posts).toBe(0);
  });

  it("posts once during an alarm and disables until acked", () => {
    const alarmAt = stream.findIndex(
      (i) => i.type === "light" && i.light === "Alarm",
    );
    let model = applyAll(emptyModel(), stream.slice(0, alarmAt + 1));
    let posts = 0;
    const post = () => {
      posts += 1;
      return Promise.resolve(true);
    };
    model = pressAcknowledge(model, post).model;
    model = pressAcknowledge(model, post).model; // double-click
    expect(posts).toBe(1);
  });
});
