import type {
  ClickAck,
  FetchLike,
  FinishResponse,
  HeadphoneCheckResponse,
  StartSessionResponse,
  SurveyPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: unknown,
    message?: string,
  ) {
    super(message ?? `request failed with status ${status}`);
    this.name = "ApiError";
  }
}

/** Expected position reported by the server on an out-of-order clip request. */
export function expectedPosition(error: unknown): number | null {
  if (error instanceof ApiError && error.status === 409) {
    const detail = (error.body as { detail?: { expected_position?: number } })?.detail;
    if (detail && typeof detail.expected_position === "number") {
      return detail.expected_position;
    }
  }
  return null;
}

/**
 * Typed client for the experiment service.
 *
 * All calls are funneled through one promise chain so at most a single
 * request is in flight at any time; clicks queued during playback flush
 * in order before the next clip request starts.
 */
export class ExperimentApi {
  private queue: Promise<unknown> = Promise.resolve();

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private enqueue<T>(op: () => Promise<T>): Promise<T> {
    const run = this.queue.then(op, op);
    this.queue = run.then(
      () => undefined,
      () => undefined,
    );
    return run;
  }

  private async requestJson<T>(path: string, init?: RequestInit, retries = 1): Promise<T> {
    return this.enqueue(async () => {
      for (;;) {
        let response: Response;
        try {
          response = await this.fetchImpl(this.baseUrl + path, init);
        } catch (err) {
          if (retries-- > 0) continue; // transient network failure
          throw err;
        }
        if (!response.ok) {
          throw new ApiError(response.status, await response.json().catch(() => null));
        }
        return (await response.json()) as T;
      }
    });
  }

  startSession(workerId: string): Promise<StartSessionResponse> {
    return this.requestJson("/api/session", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ worker_id: workerId }),
    });
  }

  fetchClip(sessionId: string, position: number): Promise<ArrayBuffer> {
    return this.enqueue(async () => {
      const response = await this.fetchImpl(
        `${this.baseUrl}/api/session/${sessionId}/clip/${position}`,
      );
      if (!response.ok) {
        throw new ApiError(response.status, await response.json().catch(() => null));
      }
      return response.arrayBuffer();
    });
  }

  postClick(sessionId: string, position: number, latencyMs: number): Promise<ClickAck> {
    return this.requestJson(`/api/session/${sessionId}/click`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ position, latency_ms: latencyMs }),
    });
  }

  finishSession(sessionId: string): Promise<FinishResponse> {
    return this.requestJson(`/api/session/${sessionId}/finish`, { method: "POST" });
  }

  submitSurvey(sessionId: string, payload: SurveyPayload): Promise<{ status: string }> {
    return this.requestJson(`/api/session/${sessionId}/survey`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  headphoneCheck(): Promise<HeadphoneCheckResponse> {
    return this.requestJson("/api/headphone-check");
  }
}
