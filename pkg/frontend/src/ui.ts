import { ExperimentApi } from "./api.js";
import { WebAudioPlayer } from "./player.js";
import { CLICK_GRACE_MS, runRound, scoreScreenText, type ClipControls } from "./round.js";
import { COMMUNITIES, submitSurvey, validateSurvey, type SurveyForm } from "./survey.js";

const LOCATIONS = ["home", "work", "commute", "outdoors"];

/**
 * Three-stage flow: headphone check plus survey, the game itself with a
 * single "heard it before" button, then the round score.
 */
export function mountApp(root: HTMLElement, baseUrl: string, workerId: string): void {
  const api = new ExperimentApi(baseUrl);
  root.innerHTML = "";
  const stage = document.createElement("div");
  root.appendChild(stage);
  void showIntro(stage, api, workerId);
}

async function showIntro(stage: HTMLElement, api: ExperimentApi, workerId: string): Promise<void> {
  const check = await api.headphoneCheck();
  stage.innerHTML = `
    <h1>Sound memory game</h1>
    <p>Please wear headphones. ${check.experimental ? "(headphone screening is experimental and currently always passes)" : ""}</p>
    <form id="survey">
      <fieldset>
        <legend>Where do you live?</legend>
        ${COMMUNITIES.map(
          (c) => `<label><input type="radio" name="community" value="${c}"> ${c}</label>`,
        ).join(" ")}
      </fieldset>
      <fieldset>
        <legend>Hours per day you spend at each place</legend>
        ${LOCATIONS.map(
          (l) =>
            `<label>${l} <input type="range" name="${l}" min="0" max="24" step="0.5" value="0">` +
            `</label>`,
        ).join("<br>")}
      </fieldset>
      <p id="survey-errors" role="alert"></p>
      <button type="submit">Start the game</button>
    </form>`;
  const form = stage.querySelector<HTMLFormElement>("#survey")!;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const surveyForm: SurveyForm = {
      community: (data.get("community") as string) ?? undefined,
      hoursPerLocation: Object.fromEntries(
        LOCATIONS.map((l) => [l, Number(data.get(l) ?? 0)]),
      ),
    };
    const errors = validateSurvey(surveyForm);
    if (errors.length > 0) {
      stage.querySelector("#survey-errors")!.textContent = errors.join("; ");
      return;
    }
    void playRound(stage, api, workerId, surveyForm);
  });
}

async function playRound(
  stage: HTMLElement,
  api: ExperimentApi,
  workerId: string,
  surveyForm: SurveyForm,
): Promise<void> {
  stage.innerHTML = `
    <p id="progress">Starting...</p>
    <button id="heard" disabled>I heard this one before</button>
    <p id="error" role="alert"></p>`;
  const button = stage.querySelector<HTMLButtonElement>("#heard")!;
  const progress = stage.querySelector("#progress")!;
  let controls: ClipControls | null = null;
  let disarmTimer: ReturnType<typeof setTimeout> | null = null;
  button.addEventListener("click", () => {
    if (controls && controls.click()) {
      button.disabled = true;
    }
  });

  try {
    const round = await runRound({
      api,
      player: new WebAudioPlayer(),
      workerId,
      participant: {
        onClip(position, clipControls) {
          controls = clipControls;
          button.disabled = false;
          if (disarmTimer) clearTimeout(disarmTimer);
          disarmTimer = setTimeout(() => {
            button.disabled = true;
          }, CLICK_GRACE_MS);
        },
      },
      onState(state) {
        if (state.stage === "playing") {
          progress.textContent = `Clip ${state.position! + 1} of ${state.nSlots}`;
        }
      },
    });
    await submitSurvey(api, round.sessionId, surveyForm);
    stage.innerHTML = `<h2>Round complete</h2><p>${scoreScreenText(round.score)}</p>`;
  } catch (err) {
    stage.querySelector("#error")!.textContent =
      `Something went wrong talking to the experiment server: ${String(err)}`;
  }
}
