/**
 * Pure HTML renderers. Strings only, no DOM access, so they are directly
 * testable. The two choice panels are presented symmetrically: nothing in
 * the markup, text, or styling may reveal which one is the existing labeling
 * and which one is the machine's suggestion.
 */

import { ViewState } from './state.js'

function img(b64: string, alt: string): string {
  return `<img src="data:image/png;base64,${b64}" alt="${alt}" draggable="false">`
}

export function renderStartForm(): string {
  return `
  <form id="start-form" class="start">
    <label>Dataset manifest <input name="dataset" required></label>
    <label>Checkpoint <input name="checkpoint" required></label>
    <label>Seed <input name="seed" type="number" value="0" required></label>
    <label>Threshold <input name="p_t" type="number" step="0.01" value="0.95"></label>
    <button type="submit">Start reviewing</button>
  </form>`
}

export function renderCandidate(state: ViewState): string {
  const c = state.candidate
  if (!c || !c.views || !c.choices) return ''
  return `
  <section class="review">
    <header class="progress">
      <span>${state.seen} of ${state.total} reviewed</span>
      <span>${state.accepted} fixes applied</span>
      <span class="kind">${c.type === 'merge' ? 'missing boundary?' : 'extra boundary?'}</span>
    </header>
    <div class="context">
      ${img(c.views.outline, 'region with both labelings outlined')}
      ${img(c.views.solid, 'region with solid overlays')}
      ${img(c.views.plain, 'image without overlays')}
    </div>
    <p class="instruction">Pick the labeling that matches the tissue. Keys: &#8592; / &#8594; choose, space skips.</p>
    <div class="choices">
      <button class="panel" data-side="left" aria-label="choose left labeling">
        ${img(c.choices.left, 'left labeling')}
      </button>
      <button class="panel" data-side="right" aria-label="choose right labeling">
        ${img(c.choices.right, 'right labeling')}
      </button>
    </div>
    <button class="skip" data-side="skip">Skip</button>
  </section>`
}

export function renderDone(state: ViewState): string {
  return `
  <section class="done">
    <h2>All candidates reviewed</h2>
    <p>${state.seen} decisions, ${state.accepted} fixes applied.</p>
  </section>`
}

export function renderError(message: string): string {
  return `<div class="banner error" role="alert">${message}</div>`
}

export function render(state: ViewState): string {
  switch (state.phase) {
    case 'idle':
      return renderStartForm()
    case 'error':
      return renderError(state.error ?? 'unknown error')
    case 'done':
      return renderDone(state)
    case 'active':
      return renderCandidate(state)
  }
}
