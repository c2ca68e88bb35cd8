/**
 * Scripted client for integration checks: starts a session against a live
 * backend, makes a fixed number of forced choices through the same
 * controller the browser uses, and prints a JSON report of what happened.
 *
 * Usage: node dist/e2e/drive.js <base-url> <dataset> <checkpoint> <seed> <n>
 */

import { ApiClient } from '../src/api.js'
import { SessionController } from '../src/state.js'
import { render } from '../src/render.js'

async function main(): Promise<void> {
  const [base, dataset, checkpoint, seedArg, nArg] = process.argv.slice(2)
  const seed = Number(seedArg ?? 0)
  const n = Number(nArg ?? 5)

  const api = new ApiClient(base)
  const controller = new SessionController(api)
  await controller.start({ dataset, checkpoint, seed, p_t: 0.5 })
  if (controller.state.phase === 'error') {
    throw new Error(`session start failed: ${controller.state.error}`)
  }

  const presented: string[] = []
  const htmlSamples: string[] = []
  const sides: Array<'left' | 'right'> = []
  for (let i = 0; i < n && controller.state.phase === 'active'; i++) {
    const candidate = controller.state.candidate!
    presented.push(candidate.candidate_id!)
    htmlSamples.push(render(controller.state))
    const side = i % 2 === 0 ? 'left' : 'right'
    sides.push(side)
    // double-click: the second call must be swallowed by the busy flag
    const first = controller.choose(side)
    const second = controller.choose(side)
    await Promise.all([first, second])
  }

  const stats = await api.stats(controller.state.sessionId!)
  process.stdout.write(JSON.stringify({
    presented,
    sides,
    posted: controller.posted,
    server_events: stats.events.length,
    html: htmlSamples,
  }))
}

main().catch((err) => {
  process.stderr.write(String(err?.stack ?? err) + '\n')
  process.exit(1)
})
