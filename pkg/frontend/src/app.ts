import { ApiClient, ApiError } from "./api.js";
import {
  AppState,
  bannerDismissed,
  catalogLoaded,
  critiqueApplied,
  initialState,
  requestFailed,
  requestStarted,
  sessionReset,
  sessionStarted,
} from "./state.js";
import { renderApp } from "./render.js";

/**
 * Controller: binds delegated DOM events to API calls and state transitions.
 * One request in flight at a time; chips and buttons are disabled while
 * loading and clicks are dropped, never queued optimistically. The DOM is
 * only rewritten from a new state, which itself only changes on server
 * responses (or their failures), so the screen never shows a ranking the
 * service did not send.
 */
export class App {
  private state: AppState = initialState;
  private inflight = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {
    root.addEventListener("click", (ev) => this.onClick(ev));
    root.addEventListener("submit", (ev) => this.onSubmit(ev));
    this.paint();
  }

  getState(): AppState {
    return this.state;
  }

  async start(): Promise<void> {
    await this.perform(async () => {
      const catalog = await this.api.getCatalog();
      return catalogLoaded(this.state, catalog);
    });
  }

  private paint(): void {
    this.root.innerHTML = renderApp(this.state);
  }

  private setState(next: AppState): void {
    this.state = next;
    this.paint();
  }

  /** Run one API interaction under the in-flight guard. */
  private async perform(action: () => Promise<AppState>): Promise<void> {
    if (this.inflight) return;
    this.inflight = true;
    this.setState(requestStarted(this.state));
    try {
      this.setState(await action());
    } catch (err) {
      const message = err instanceof ApiError ? err.message : String(err);
      this.setState(requestFailed(this.state, message));
    } finally {
      this.inflight = false;
    }
  }

  private onClick(ev: Event): void {
    const target = (ev.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!target || (target as HTMLButtonElement).disabled) return;
    const action = target.dataset.action;
    if (action === "dismiss-error") {
      this.setState(bannerDismissed(this.state));
    } else if (action === "critique") {
      const kp = Number(target.dataset.kp);
      void this.critique(kp);
    } else if (action === "reset") {
      void this.reset();
    }
  }

  private onSubmit(ev: Event): void {
    ev.preventDefault();
    const form = ev.target as HTMLFormElement;
    if (form.dataset.form !== "start") return;
    const userId = (form.elements.namedItem("user_id") as HTMLInputElement | null)?.value.trim();
    const kps = Array.from(
      form.querySelectorAll<HTMLInputElement>('input[name="kp"]:checked'),
    ).map((el) => Number(el.value));
    void this.createSession(userId || undefined, kps);
  }

  async createSession(userId: string | undefined, keyphrases: number[]): Promise<void> {
    await this.perform(async () => {
      const body = {
        ...(userId !== undefined ? { user_id: userId } : {}),
        ...(keyphrases.length ? { keyphrases } : {}),
      };
      const resp = await this.api.createSession(body);
      return sessionStarted(this.state, resp);
    });
  }

  async critique(keyphraseId: number): Promise<void> {
    const session = this.state.session;
    if (!session || session.remaining_turns <= 0) return;
    await this.perform(async () => {
      const resp = await this.api.critique(session.session_id, keyphraseId);
      return critiqueApplied(this.state, resp);
    });
  }

  async reset(): Promise<void> {
    const session = this.state.session;
    if (!session) return;
    await this.perform(async () => {
      const resp = await this.api.reset(session.session_id);
      return sessionReset(this.state, resp);
    });
  }
}
