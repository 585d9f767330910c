import type { ExperimentApi } from "./api.js";
import type { Community, SurveyPayload } from "./types.js";

export const COMMUNITIES: readonly Community[] = ["urban", "suburban", "rural"];

export interface SurveyForm {
  community?: string;
  hoursPerLocation: Record<string, number>;
}

/** Inline validation messages; an empty list means the form can submit. */
export function validateSurvey(form: SurveyForm): string[] {
  const errors: string[] = [];
  if (!form.community) {
    errors.push("select the community you live in");
  } else if (!COMMUNITIES.includes(form.community as Community)) {
    errors.push(`unknown community: ${form.community}`);
  }
  const entries = Object.entries(form.hoursPerLocation);
  if (entries.length === 0) {
    errors.push("set at least one hours-per-location slider");
  }
  for (const [location, hours] of entries) {
    if (!Number.isFinite(hours) || hours < 0 || hours > 24) {
      errors.push(`hours for ${location} must be between 0 and 24`);
    }
  }
  return errors;
}

export function toPayload(form: SurveyForm): SurveyPayload {
  const errors = validateSurvey(form);
  if (errors.length > 0) {
    throw new Error(`survey form invalid: ${errors.join("; ")}`);
  }
  return {
    community: form.community as Community,
    hours_per_location: { ...form.hoursPerLocation },
  };
}

export async function submitSurvey(
  api: ExperimentApi,
  sessionId: string,
  form: SurveyForm,
): Promise<SurveyPayload> {
  const payload = toPayload(form);
  await api.submitSurvey(sessionId, payload);
  return payload;
}
