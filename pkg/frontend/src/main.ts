/** Browser bootstrap: wires the controller to the document. */

import { ApiClient } from './api.js'
import { SessionController } from './state.js'
import { render } from './render.js'

const root = document.getElementById('app')!
const api = new ApiClient('')
const controller = new SessionController(api)

function paint(): void {
  root.innerHTML = render(controller.state)
}

root.addEventListener('submit', async (ev) => {
  const form = ev.target as HTMLFormElement
  if (form.id !== 'start-form') return
  ev.preventDefault()
  const data = new FormData(form)
  await controller.start({
    dataset: String(data.get('dataset')),
    checkpoint: String(data.get('checkpoint')),
    seed: Number(data.get('seed')),
    p_t: Number(data.get('p_t') ?? 0.95),
  })
  paint()
})

root.addEventListener('click', async (ev) => {
  const button = (ev.target as HTMLElement).closest('button[data-side]')
  if (!button) return
  const side = button.getAttribute('data-side') as 'left' | 'right' | 'skip'
  await controller.choose(side)
  paint()
})

document.addEventListener('keydown', async (ev) => {
  if (controller.state.phase !== 'active') return
  const side = ev.key === 'ArrowLeft' ? 'left'
    : ev.key === 'ArrowRight' ? 'right'
    : ev.key === ' ' ? 'skip' : null
  if (!side) return
  ev.preventDefault()
  await controller.choose(side)
  paint()
})

paint()
