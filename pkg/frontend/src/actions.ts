// Operator actions with optimistic-disable: a press flips the in-flight
// flag immediately (blocking further presses) and posts to the API; the
// flag clears when the resulting event arrives on the stream, or is
// reverted by the caller if the HTTP call fails. Guards mirror the API's
// own rules, so a press the server would reject is never sent.

import { canAcknowledge, canConfirm, type ViewModel } from "./state.js";

export type Poster = () => Promise<boolean>;

export interface PressResult {
  model: ViewModel;
  posted: boolean;
  /** resolves true when the POST succeeded; false means revert the flag */
  settle: Promise<boolean>;
}

export function pressConfirm(model: ViewModel, post: Poster): PressResult {
  if (!canConfirm(model) || model.activeStepId === null) {
    return { model, posted: false, settle: Promise.resolve(true) };
  }
  return {
    model: { ...model, confirmInFlight: true },
    posted: true,
    settle: post(),
  };
}

export function pressAcknowledge(model: ViewModel, post: Poster): PressResult {
  if (!canAcknowledge(model)) {
    return { model, posted: false, settle: Promise.resolve(true) };
  }
  return {
    model: { ...model, ackInFlight: true },
    posted: true,
    settle: post(),
  };
}
