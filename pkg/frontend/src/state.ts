/**
 * Session view state machine.
 *
 * Phases: idle (no session yet), loading (one request in flight),
 * active (session open, critiques allowed), exhausted (turn budget spent),
 * error (nothing to show, e.g. the catalog or session creation failed).
 *
 * Every transition is a pure function from (state, server payload) to a new
 * state. The view holds nothing the API did not send: rankings, scores and
 * rank deltas all come verbatim from the latest response, so replaying a
 * recorded transcript reproduces the exact same states.
 */

import type { Catalog, SessionResponse } from "./types.js";

export type Phase = "idle" | "loading" | "active" | "exhausted" | "error";

export interface RankDelta {
  itemId: string;
  from: number | null; // null when the item was outside the previous ranking
  to: number;
}

export interface TimelineEntry {
  turn: number;
  keyphraseId: number;
  keyphraseName: string;
  deltas: RankDelta[];
}

export interface AppState {
  phase: Phase;
  catalog: Catalog | null;
  session: SessionResponse | null;
  timeline: TimelineEntry[];
  banner: string | null; // dismissible API error message
}

export const initialState: AppState = {
  phase: "idle",
  catalog: null,
  session: null,
  timeline: [],
  banner: null,
};

function phaseFor(session: SessionResponse): Phase {
  return session.remaining_turns > 0 ? "active" : "exhausted";
}

export function keyphraseName(state: AppState, id: number): string {
  const entry = state.catalog?.keyphrases.find((k) => k.keyphrase_id === id);
  return entry ? entry.name : `#${id}`;
}

export function catalogLoaded(state: AppState, catalog: Catalog): AppState {
  const phase = state.session ? phaseFor(state.session) : "idle";
  return { ...state, catalog, phase };
}

export function requestStarted(state: AppState): AppState {
  return { ...state, phase: "loading" };
}

export function sessionStarted(state: AppState, resp: SessionResponse): AppState {
  return { ...state, phase: phaseFor(resp), session: resp, timeline: [], banner: null };
}

export function critiqueApplied(state: AppState, resp: SessionResponse): AppState {
  const critiqued = resp.critiques[resp.critiques.length - 1];
  const deltas: RankDelta[] = resp.recommendations.map((row) => ({
    itemId: row.item_id,
    from: row.previous_rank ?? null,
    to: row.rank,
  }));
  const entry: TimelineEntry = {
    turn: resp.turn,
    keyphraseId: critiqued ?? -1,
    keyphraseName: critiqued === undefined ? "?" : keyphraseName(state, critiqued),
    deltas,
  };
  return {
    ...state,
    phase: phaseFor(resp),
    session: resp,
    timeline: [...state.timeline, entry],
    banner: null,
  };
}

export function sessionReset(state: AppState, resp: SessionResponse): AppState {
  return sessionStarted(state, resp);
}

export function requestFailed(state: AppState, message: string): AppState {
  // with a session on screen the failure is a banner, not a dead end
  const phase = state.session ? phaseFor(state.session) : "error";
  return { ...state, phase, banner: message };
}

export function bannerDismissed(state: AppState): AppState {
  const phase =
    state.phase === "error" && state.session === null
      ? "idle"
      : state.session
        ? phaseFor(state.session)
        : state.phase;
  return { ...state, phase, banner: null };
}
