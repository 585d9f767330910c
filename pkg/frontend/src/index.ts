export { ApiError, ExperimentApi, expectedPosition } from "./api.js";
export { WebAudioPlayer } from "./player.js";
export {
  CLICK_GRACE_MS,
  runRound,
  scoreScreenText,
  type CompletedRound,
  type Participant,
  type RoundOptions,
  type RoundStateEvent,
} from "./round.js";
export { COMMUNITIES, submitSurvey, toPayload, validateSurvey, type SurveyForm } from "./survey.js";
export { mountApp } from "./ui.js";
export type * from "./types.js";
