import { ApiError, ExperimentApi, expectedPosition } from "./api.js";
import type { ClipPlayer, Clock, FinishResponse } from "./types.js";

/** The repeat button stays active this long after a clip finishes playing. */
export const CLICK_GRACE_MS = 1500;

export interface ClipControls {
  /** Returns true when the click was accepted for the current clip. */
  click(): boolean;
}

export interface Participant {
  /** Called when a clip starts playing; keep the controls to click later. */
  onClip(position: number, controls: ClipControls): void;
}

export type RoundStage = "starting" | "playing" | "finished" | "error";

export interface RoundStateEvent {
  stage: RoundStage;
  position?: number;
  nSlots?: number;
  score?: FinishResponse;
  message?: string;
}

export interface RoundOptions {
  api: ExperimentApi;
  player: ClipPlayer;
  participant: Participant;
  workerId: string;
  clock?: Clock;
  onState?: (state: RoundStateEvent) => void;
  /** Resume a session created earlier (the server cursor wins). */
  resume?: { sessionId: string; nSlots: number };
}

export interface CompletedRound {
  sessionId: string;
  nSlots: number;
  score: FinishResponse;
  clickedPositions: number[];
}

interface ActiveClip {
  position: number;
  startedAt: number;
  endedAt: number | null;
}

export async function runRound(options: RoundOptions): Promise<CompletedRound> {
  const clock: Clock = options.clock ?? { now: () => performance.now() };
  const notify = options.onState ?? (() => undefined);
  const { api, player, participant } = options;

  notify({ stage: "starting" });
  let sessionId: string;
  let nSlots: number;
  let position = 0;
  try {
    if (options.resume) {
      sessionId = options.resume.sessionId;
      nSlots = options.resume.nSlots;
      position = await discoverCursor(api, sessionId);
    } else {
      const started = await api.startSession(options.workerId);
      sessionId = started.session_id;
      nSlots = started.n_slots;
    }

    const clicked = new Set<number>();
    let active: ActiveClip | null = null;
    const controls: ClipControls = {
      click(): boolean {
        if (!active) return false;
        const now = clock.now();
        if (active.endedAt !== null && now - active.endedAt > CLICK_GRACE_MS) {
          return false; // grace window is over
        }
        if (clicked.has(active.position)) return false;
        clicked.add(active.position);
        const latency = Math.max(0, now - active.startedAt);
        void api.postClick(sessionId, active.position, latency);
        return true;
      },
    };

    for (; position < nSlots; position++) {
      const data = await api.fetchClip(sessionId, position);
      active = { position, startedAt: clock.now(), endedAt: null };
      notify({ stage: "playing", position, nSlots });
      participant.onClip(position, controls);
      await player.play(data);
      active.endedAt = clock.now();
    }

    const score = await api.finishSession(sessionId);
    notify({ stage: "finished", score, nSlots });
    return {
      sessionId,
      nSlots,
      score,
      clickedPositions: [...clicked].sort((a, b) => a - b),
    };
  } catch (err) {
    const message =
      err instanceof ApiError ? `service error ${err.status}` : `network error: ${String(err)}`;
    notify({ stage: "error", message });
    throw err;
  }
}

/** Probe an invalid position; the 409 detail names the server cursor. */
async function discoverCursor(api: ExperimentApi, sessionId: string): Promise<number> {
  try {
    await api.fetchClip(sessionId, -1);
  } catch (err) {
    const expected = expectedPosition(err);
    if (expected !== null) return expected;
    throw err;
  }
  throw new ApiError(500, null, "cursor probe unexpectedly succeeded");
}

export function scoreScreenText(score: FinishResponse): string {
  const verdict = score.accepted ? "round counted" : "round not counted";
  const vigilance = Math.round(score.vigilance_score * 100);
  const falseAlarms = Math.round(score.false_positive_rate * 100);
  return (
    `Your score: ${score.display_score}. ` +
    `You caught ${vigilance}% of the quick repeats with ${falseAlarms}% false alarms (${verdict}).`
  );
}
