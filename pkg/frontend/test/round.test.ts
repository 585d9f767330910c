import { describe, expect, it } from "vitest";

import { ApiError, ExperimentApi } from "../src/api.js";
import { CLICK_GRACE_MS, runRound, scoreScreenText, type ClipControls } from "../src/round.js";
import { FakeClock, FakePlayer, MockService } from "./mock_service.js";

function setup(nSlots = 20, failAfter: number | null = null) {
  const service = new MockService(nSlots);
  const clock = new FakeClock();
  const api = new ExperimentApi("http://mock", service.fetchImpl);
  const player = new FakePlayer(clock, 5000, failAfter);
  return { service, clock, api, player };
}

describe("runRound", () => {
  it("auto-clicker produces a click event for every position", async () => {
    const { service, clock, api, player } = setup();
    const round = await runRound({
      api,
      player,
      workerId: "w1",
      clock,
      participant: {
        onClip(_position, controls) {
          expect(controls.click()).toBe(true);
          expect(controls.click()).toBe(false); // one click per clip
        },
      },
    });
    const clicks = service.eventsOf("click");
    expect(clicks).toHaveLength(round.nSlots);
    expect(clicks.map((e) => e.payload.position)).toEqual([...Array(round.nSlots).keys()]);
    for (const event of clicks) {
      expect(event.payload.latency_ms).toBeGreaterThanOrEqual(0);
    }
    expect(round.clickedPositions).toHaveLength(round.nSlots);
  });

  it("requests clips strictly in order", async () => {
    const { service, clock, api, player } = setup();
    await runRound({ api, player, workerId: "w1", clock, participant: { onClip() {} } });
    const positions = service.clipRequests.map((r) => r.position);
    expect(positions).toEqual([...Array(20).keys()]);
  });

  it("renders a score screen at the end", async () => {
    const { clock, api, player } = setup();
    const states: string[] = [];
    const round = await runRound({
      api,
      player,
      workerId: "w1",
      clock,
      participant: { onClip() {} },
      onState(state) {
        states.push(state.stage);
      },
    });
    expect(states.at(-1)).toBe("finished");
    const text = scoreScreenText(round.score);
    expect(text).toContain("Your score:");
    expect(text).toContain("false alarms");
  });

  it("a silent participant produces zero clicks", async () => {
    const { service, clock, api, player } = setup();
    await runRound({ api, player, workerId: "w1", clock, participant: { onClip() {} } });
    expect(service.eventsOf("click")).toHaveLength(0);
  });

  it("rejects clicks after the grace window", async () => {
    const { service, clock, api, player } = setup(5);
    let saved: ClipControls | null = null;
    await runRound({
      api,
      player,
      workerId: "w1",
      clock,
      participant: {
        onClip(position, controls) {
          if (position === 2) saved = controls;
        },
      },
    });
    // the round is over; far past the grace window for clip 2
    clock.advance(CLICK_GRACE_MS + 1);
    expect(saved!.click()).toBe(false);
    expect(service.eventsOf("click")).toHaveLength(0);
  });

  it("accepts a click inside the post-clip grace window", async () => {
    // fire the click while the next clip request is on the wire: clip 1 has
    // ended 200ms ago, which is still inside the grace window
    const service = new MockService(4);
    const clock = new FakeClock();
    let saved: ClipControls | null = null;
    const intercepting: typeof service.fetchImpl = async (url, init) => {
      if (String(url).endsWith("/clip/2") && saved) {
        clock.advance(200);
        expect(saved.click()).toBe(true);
        saved = null;
      }
      return service.fetchImpl(url, init);
    };
    const api = new ExperimentApi("http://mock", intercepting);
    const player = new FakePlayer(clock, 5000);
    await runRound({
      api,
      player,
      workerId: "w1",
      clock,
      participant: {
        onClip(position, controls) {
          if (position === 1) saved = controls;
        },
      },
    });
    const clicks = service.eventsOf("click");
    expect(clicks).toHaveLength(1);
    expect(clicks[0]!.payload.position).toBe(1);
    expect(clicks[0]!.payload.latency_ms).toBe(5200);
  });

  it("click latency reflects the clock delta from clip start", async () => {
    const { service, clock, api, player } = setup(4);
    await runRound({
      api,
      player,
      workerId: "w1",
      clock,
      participant: {
        onClip(position, controls) {
          if (position === 3) {
            clock.advance(730);
            controls.click();
          }
        },
      },
    });
    const clicks = service.eventsOf("click");
    expect(clicks).toHaveLength(1);
    expect(clicks[0]!.payload.latency_ms).toBe(730);
  });

  it("resumes at the server cursor after an interrupted round", async () => {
    const { service, clock, api, player } = setup(20, 7);
    let started: { sessionId: string; nSlots: number } | null = null;
    await expect(
      runRound({
        api,
        player,
        workerId: "w1",
        clock,
        participant: { onClip() {} },
        onState(state) {
          if (state.stage === "playing" && !started) {
            started = { sessionId: service.events[0]!.sessionId, nSlots: state.nSlots! };
          }
        },
      }),
    ).rejects.toThrow("player gave up");
    expect(service.sessions.get(started!.sessionId)!.cursor).toBe(8);

    const player2 = new FakePlayer(clock, 5000);
    const round = await runRound({
      api,
      player: player2,
      workerId: "w1",
      clock,
      participant: { onClip() {} },
      resume: started!,
    });
    expect(round.sessionId).toBe(started!.sessionId);
    // the cursor probe plus a straight run from 8 to 19, never rewinding
    const requests = service.clipRequests.filter((r) => r.sessionId === started!.sessionId);
    const afterInterrupt = requests.slice(8);
    expect(afterInterrupt[0]!.position).toBe(-1); // cursor probe
    expect(afterInterrupt.slice(1).map((r) => r.position)).toEqual(
      [...Array(12).keys()].map((i) => i + 8),
    );
    expect(service.sessions.get(started!.sessionId)!.finished).toBe(true);
  });

  it("surfaces service errors as an error state", async () => {
    const { clock, api, player, service } = setup();
    for (let i = 0; i < 8; i++) {
      await api.startSession("w-limit");
    }
    const states: string[] = [];
    await expect(
      runRound({
        api,
        player,
        workerId: "w-limit",
        clock,
        participant: { onClip() {} },
        onState(s) {
          states.push(s.stage);
        },
      }),
    ).rejects.toBeInstanceOf(ApiError);
    expect(states.at(-1)).toBe("error");
    expect(service.eventsOf("session_finished")).toHaveLength(0);
  });
});

describe("ExperimentApi", () => {
  it("keeps at most one request in flight", async () => {
    let inFlight = 0;
    let peak = 0;
    const service = new MockService(5);
    const gated: typeof service.fetchImpl = async (url, init) => {
      inFlight += 1;
      peak = Math.max(peak, inFlight);
      await new Promise((resolve) => setTimeout(resolve, 1));
      const response = await service.fetchImpl(url, init);
      inFlight -= 1;
      return response;
    };
    const api = new ExperimentApi("http://mock", gated);
    const started = await api.startSession("w");
    await Promise.all([
      api.fetchClip(started.session_id, 0),
      api.postClick(started.session_id, 0, 10),
      api.fetchClip(started.session_id, 1),
      api.postClick(started.session_id, 1, 20),
    ]);
    expect(peak).toBe(1);
  });

  it("retries a transient network failure once", async () => {
    const service = new MockService(5);
    let failures = 1;
    const flaky: typeof service.fetchImpl = async (url, init) => {
      if (failures > 0 && String(url).endsWith("/api/session")) {
        failures -= 1;
        throw new TypeError("connection reset");
      }
      return service.fetchImpl(url, init);
    };
    const api = new ExperimentApi("http://mock", flaky);
    const started = await api.startSession("w");
    expect(started.n_slots).toBe(5);
  });
});
