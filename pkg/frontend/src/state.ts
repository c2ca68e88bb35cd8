/**
 * Session state machine for the forced-choice screen.
 *
 * Exactly one candidate is shown at a time; while a decision is in flight the
 * busy flag is set and further clicks are ignored, so rapid clicking cannot
 * emit duplicate decision posts. Clicking a panel maps to accept/reject via
 * the candidate's randomized placement token from the backend; the mapping
 * never reaches the rendered markup.
 */

import { ApiClient, ApiError, Decision, NextCandidate, SessionForm, Side } from './api.js'

export interface ViewState {
  phase: 'idle' | 'active' | 'done' | 'error'
  sessionId: string | null
  candidate: NextCandidate | null
  busy: boolean
  error: string | null
  seen: number
  total: number
  accepted: number
}

export function initialState(): ViewState {
  return {
    phase: 'idle',
    sessionId: null,
    candidate: null,
    busy: false,
    error: null,
    seen: 0,
    total: 0,
    accepted: 0,
  }
}

export class SessionController {
  state: ViewState = initialState()
  /** decisions actually posted, in order (observable for tests) */
  posted: Array<{ candidateId: string; decision: Decision }> = []

  constructor(private api: ApiClient) {}

  private applyProgress(progress: { seen: number; total: number; accepted: number }): void {
    this.state.seen = progress.seen
    this.state.total = progress.total
    this.state.accepted = progress.accepted
  }

  private async fetchNext(): Promise<void> {
    const sessionId = this.state.sessionId
    if (sessionId === null) throw new Error('no session')
    const candidate = await this.api.next(sessionId)
    this.applyProgress(candidate.progress)
    if (candidate.done) {
      this.state.phase = 'done'
      this.state.candidate = null
    } else {
      this.state.phase = 'active'
      this.state.candidate = candidate
    }
  }

  async start(form: SessionForm): Promise<ViewState> {
    this.state = initialState()
    try {
      this.state.sessionId = await this.api.createSession(form)
      await this.fetchNext()
    } catch (err) {
      this.state.phase = 'error'
      this.state.error = err instanceof Error ? err.message : String(err)
    }
    return this.state
  }

  /** Map a clicked side (or skip) to a decision and advance. */
  async choose(side: Side | 'skip'): Promise<ViewState> {
    if (this.state.busy || this.state.phase !== 'active' || !this.state.candidate) {
      return this.state
    }
    const candidate = this.state.candidate
    const decision: Decision =
      side === 'skip' ? 'skip' : side === candidate.accept_side ? 'accept' : 'reject'
    this.state.busy = true
    try {
      const ack = await this.api.decide(this.state.sessionId!, candidate.candidate_id!, decision)
      this.posted.push({ candidateId: candidate.candidate_id!, decision })
      this.applyProgress(ack.progress)
      if (ack.done) {
        this.state.phase = 'done'
        this.state.candidate = null
      } else {
        await this.fetchNext()
      }
    } catch (err) {
      if (err instanceof ApiError && err.kind === 'StaleCursor') {
        await this.fetchNext() // someone advanced the cursor; resync
      } else {
        this.state.phase = 'error'
        this.state.error = err instanceof Error ? err.message : String(err)
      }
    } finally {
      this.state.busy = false
    }
    return this.state
  }
}
