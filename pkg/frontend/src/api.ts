/**
 * Typed client for the segproof session API.
 *
 * The fetch implementation is injectable so tests and the node driver can
 * run without a browser.
 */

export type Decision = 'accept' | 'reject' | 'skip'
export type Side = 'left' | 'right'

export interface SessionForm {
  dataset: string
  checkpoint: string
  p_t?: number
  seed: number
  time_limit?: number | null
}

export interface Progress {
  seen: number
  total: number
  accepted: number
}

export interface Views {
  outline: string
  solid: string
  plain: string
}

export interface NextCandidate {
  done: boolean
  candidate_id: string | null
  type: string | null
  score: number | null
  views: Views | null
  choices: { left: string; right: string } | null
  accept_side: Side | null
  progress: Progress
}

export interface DecisionAck {
  progress: Progress
  done: boolean
}

export interface SessionStats {
  events: Array<Record<string, unknown>>
  accepted: number
  vi_trail: number[] | null
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

export class ApiError extends Error {
  constructor(
    public status: number,
    public kind: string,
    message: string,
  ) {
    super(message)
  }
}

async function parse<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let kind = 'HttpError'
    let detail = `${resp.status}`
    try {
      const body = (await resp.json()) as { error?: string; detail?: string }
      kind = body.error ?? kind
      detail = body.detail ?? detail
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, kind, detail)
  }
  return (await resp.json()) as T
}

export class ApiClient {
  constructor(
    private base: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async createSession(form: SessionForm): Promise<string> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(form),
    })
    const body = await parse<{ id: string }>(resp)
    return body.id
  }

  async next(sessionId: string): Promise<NextCandidate> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions/${sessionId}/next`)
    return parse<NextCandidate>(resp)
  }

  async decide(sessionId: string, candidateId: string, decision: Decision): Promise<DecisionAck> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions/${sessionId}/decision`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ candidate_id: candidateId, decision }),
    })
    return parse<DecisionAck>(resp)
  }

  async stats(sessionId: string): Promise<SessionStats> {
    const resp = await this.fetchImpl(`${this.base}/api/sessions/${sessionId}/stats`)
    return parse<SessionStats>(resp)
  }
}
