// Pure view: AppState in, HTML string out. app.ts swaps it into the page and
// handles events by delegation, so every screen is a function of state and
// recorded transcripts replay to identical markup.

import type { RecommendationRow, SessionResponse } from "./types.js";
import type { AppState, TimelineEntry } from "./state.js";
import { keyphraseName } from "./state.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function chip(state: AppState, id: number, locked: boolean): string {
  const name = escapeHtml(keyphraseName(state, id));
  const disabled = locked ? " disabled" : "";
  return (
    `<button class="chip" data-action="critique" data-kp="${id}"` +
    `${disabled} title="not ${name}">${name}</button>`
  );
}

function moveMarker(row: RecommendationRow, turn: number): string {
  if (row.previous_rank === undefined) {
    return turn > 0 ? `<span class="move new">new</span>` : "";
  }
  const step = row.previous_rank - row.rank;
  if (step > 0) return `<span class="move up">&#8593;${step}</span>`;
  if (step < 0) return `<span class="move down">&#8595;${-step}</span>`;
  return `<span class="move same">=</span>`;
}

function itemCard(state: AppState, row: RecommendationRow, locked: boolean, turn: number): string {
  const chips = row.keyphrase_ids.map((id) => chip(state, id, locked)).join("");
  const moved =
    row.previous_rank !== undefined && row.previous_rank !== row.rank
      ? row.previous_rank > row.rank
        ? " moved-up"
        : " moved-down"
      : "";
  return (
    `<li class="card${moved}" data-item="${escapeHtml(row.item_id)}">` +
    `<span class="rank">${row.rank}</span>` +
    `<span class="item-id">${escapeHtml(row.item_id)}</span>` +
    `<span class="score">${row.score.toFixed(3)}</span>` +
    moveMarker(row, turn) +
    `<span class="chips">${chips}</span>` +
    `</li>`
  );
}

function timelineEntry(entry: TimelineEntry): string {
  const deltas = entry.deltas
    .map((d) => {
      const from = d.from === null ? "&#8211;" : String(d.from);
      return `<span class="delta">${escapeHtml(d.itemId)} ${from}&#8594;${d.to}</span>`;
    })
    .join(" ");
  return (
    `<li class="turn-entry" data-turn="${entry.turn}">` +
    `turn ${entry.turn}: not <strong>${escapeHtml(entry.keyphraseName)}</strong> ` +
    `<span class="deltas">${deltas}</span></li>`
  );
}

function startPanel(state: AppState, locked: boolean): string {
  const kps = state.catalog
    ? state.catalog.keyphrases
        .map(
          (k) =>
            `<label class="chip-check"><input type="checkbox" name="kp" ` +
            `value="${k.keyphrase_id}"${locked ? " disabled" : ""}>` +
            `${escapeHtml(k.name)}</label>`,
        )
        .join("")
    : `<em>catalog not loaded</em>`;
  return (
    `<form class="start" data-form="start">` +
    `<h2>start a session</h2>` +
    `<label>user id <input name="user_id" placeholder="e.g. u005"` +
    `${locked ? " disabled" : ""}></label>` +
    `<fieldset class="kp-select"><legend>or pick taste keyphrases (cold start)</legend>` +
    kps +
    `</fieldset>` +
    `<button type="submit" class="primary"${locked ? " disabled" : ""}>start</button>` +
    `</form>`
  );
}

function sessionView(state: AppState, session: SessionResponse, locked: boolean): string {
  const exhausted = state.phase === "exhausted";
  const chipsLocked = locked || exhausted;
  const who = session.user_id === null ? "cold start" : escapeHtml(session.user_id);
  const budget = exhausted
    ? `<div class="banner budget">turn budget spent, no critiques left. ` +
      `Reset to start over.</div>`
    : "";
  const cards = session.recommendations
    .map((row) => itemCard(state, row, chipsLocked, session.turn))
    .join("");
  const explanation = session.explanation
    .map((e) => chip(state, e.keyphrase_id, chipsLocked))
    .join("");
  const timeline = state.timeline.length
    ? `<ol class="timeline">${state.timeline.map(timelineEntry).join("")}</ol>`
    : `<p class="timeline-empty">no critiques yet. Click a keyphrase chip to reject it.</p>`;
  return (
    `<section class="session" data-session="${escapeHtml(session.session_id)}">` +
    `<header>` +
    `<span class="who">${who}</span>` +
    `<span class="turn">turn ${session.turn}</span>` +
    `<span class="remaining">${session.remaining_turns} critiques left</span>` +
    `<button data-action="reset"${locked ? " disabled" : ""}>reset</button>` +
    `</header>` +
    budget +
    `<h2>recommendations</h2>` +
    `<ol class="cards">${cards}</ol>` +
    `<h2>the model thinks you like</h2>` +
    `<div class="explanation">${explanation}</div>` +
    `<h2>critique history</h2>` +
    timeline +
    `</section>`
  );
}

export function renderApp(state: AppState): string {
  const locked = state.phase === "loading";
  const banner = state.banner
    ? `<div class="banner error" role="alert">${escapeHtml(state.banner)} ` +
      `<button data-action="dismiss-error">dismiss</button></div>`
    : "";
  const body = state.session
    ? sessionView(state, state.session, locked)
    : startPanel(state, locked);
  return (
    `<div class="app${locked ? " loading" : ""}"` +
    ` aria-busy="${locked ? "true" : "false"}">` +
    banner +
    body +
    `</div>`
  );
}
