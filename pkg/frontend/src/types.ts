export interface StartSessionResponse {
  session_id: string;
  n_slots: number;
}

export interface FinishResponse {
  vigilance_score: number;
  false_positive_rate: number;
  accepted: boolean;
  display_score: number;
}

export interface ClickAck {
  status: string;
  counted: boolean;
}

export type Community = "urban" | "suburban" | "rural";

export interface SurveyPayload {
  community: Community;
  hours_per_location: Record<string, number>;
}

export interface HeadphoneCheckResponse {
  passed: boolean;
  experimental: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface Clock {
  now(): number;
}

/** Resolves when the clip has played to completion. */
export interface ClipPlayer {
  play(data: ArrayBuffer): Promise<void>;
}
