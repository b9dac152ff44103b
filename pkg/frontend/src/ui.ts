// DOM console: transcript, state panel with confidence bars, friction modal
// queue, threshold sliders, export. Renders only server-confirmed snapshots
// (no optimistic updates); the send controls disable while a request is in
// flight.

import { SessionController } from './session.js';
import { exportTranscriptJson } from './export.js';
import { confidenceBar, questionCards, statePanelModel } from './viewmodel.js';
import { AnswerKind } from './types.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ConsoleUI {
  private root: HTMLElement;
  private controller: SessionController;
  private transcriptBox!: HTMLElement;
  private statePanel!: HTMLElement;
  private questionBox!: HTMLElement;
  private banner!: HTMLElement;
  private input!: HTMLInputElement;
  private sendButton!: HTMLButtonElement;
  private tauFp!: HTMLInputElement;
  private tauFn!: HTMLInputElement;

  constructor(root: HTMLElement, controller: SessionController) {
    this.root = root;
    this.controller = controller;
    this.build();
    controller.onChange(() => this.render());
  }

  private build(): void {
    this.root.innerHTML = '';
    this.banner = el('div', 'banner hidden');
    const layout = el('div', 'layout');
    const left = el('div', 'chat');
    this.transcriptBox = el('div', 'transcript');
    const controls = el('div', 'controls');
    this.input = el('input', 'utterance');
    this.input.placeholder = 'say something...';
    this.sendButton = el('button', 'send', 'send');
    this.sendButton.addEventListener('click', () => this.send());
    this.input.addEventListener('keydown', (event) => {
      if (event.key === 'Enter') this.send();
    });
    controls.append(this.input, this.sendButton);
    left.append(this.transcriptBox, controls);

    const right = el('div', 'side');
    this.statePanel = el('div', 'state-panel');
    this.questionBox = el('div', 'questions');
    const sliders = el('div', 'sliders');
    this.tauFp = this.slider(sliders, 'removal threshold', 0.1);
    this.tauFn = this.slider(sliders, 'addition threshold', 0.5);
    const apply = el('button', 'apply', 'apply to next turn');
    apply.addEventListener('click', () => {
      this.controller.adjustThresholds(Number(this.tauFp.value), Number(this.tauFn.value));
    });
    sliders.append(apply);
    const exportButton = el('button', 'export', 'export transcript');
    exportButton.addEventListener('click', () => this.export());
    right.append(this.statePanel, this.questionBox, sliders, exportButton);
    layout.append(left, right);
    this.root.append(this.banner, layout);
  }

  private slider(parent: HTMLElement, label: string, initial: number): HTMLInputElement {
    const wrap = el('label', 'slider', label);
    const input = el('input');
    input.type = 'range';
    input.min = '0';
    input.max = '1';
    input.step = '0.05';
    input.value = String(initial);
    wrap.append(input);
    parent.append(wrap);
    return input;
  }

  private async send(): Promise<void> {
    const text = this.input.value.trim();
    if (!text) return;
    try {
      await this.controller.sendTurn(text);
      this.input.value = '';
    } catch {
      // the controller snapshot carries the error; render() shows it
    }
  }

  private async answer(questionId: string, kind: AnswerKind): Promise<void> {
    let value: string | undefined;
    if (kind === 'update') {
      value = window.prompt('new value?') ?? undefined;
      if (!value) return;
    }
    try {
      await this.controller.answerQuestion(questionId, { kind, value });
    } catch {
      // surfaced via snapshot.error
    }
  }

  private export(): void {
    const snapshot = this.controller.snapshot();
    const blob = new Blob(
      [exportTranscriptJson(this.controller.ontology, snapshot.transcript)],
      { type: 'application/json' },
    );
    const link = document.createElement('a');
    link.href = URL.createObjectURL(blob);
    link.download = 'session_corpus.json';
    link.click();
    URL.revokeObjectURL(link.href);
  }

  render(): void {
    const snapshot = this.controller.snapshot();
    this.banner.textContent = snapshot.error ?? '';
    this.banner.className = snapshot.error ? 'banner error' : 'banner hidden';
    if (snapshot.error) {
      const dismiss = el('button', 'dismiss', 'dismiss');
      dismiss.addEventListener('click', () => { this.banner.className = 'banner hidden'; });
      this.banner.append(dismiss);
    }
    this.sendButton.disabled = snapshot.busy || snapshot.pendingQuestions.length > 0;

    this.transcriptBox.innerHTML = '';
    for (const turn of snapshot.transcript) {
      if (turn.system) this.transcriptBox.append(el('div', 'bubble system', turn.system));
      this.transcriptBox.append(el('div', 'bubble user', turn.user));
    }

    const panel = statePanelModel(snapshot);
    this.statePanel.innerHTML = '';
    this.statePanel.append(el('div', 'panel-title',
      panel.committedIndicator ? 'state (committed)' : 'state (awaiting confirmations)'));
    for (const row of panel.rows) {
      const cls = ['slot-row', row.status, row.amber ? 'amber' : '', row.badge ?? ''].join(' ').trim();
      this.statePanel.append(el('div', cls,
        `${row.slot} = ${row.value}  [${confidenceBar(row.confidence)}] ${row.confidence.toFixed(2)}`
        + (row.badge ? `  (${row.badge})` : '') + (row.status === 'ghost' ? '  (unconfirmed)' : '')));
    }
    for (const row of panel.removedRows) {
      this.statePanel.append(el('div', 'slot-row removed',
        `${row.slot} = ${row.value}  (removed, ${row.confidence.toFixed(2)})`));
    }

    this.questionBox.innerHTML = '';
    for (const card of questionCards(snapshot)) {
      const box = el('div', card.answered ? 'question answered' : 'question');
      box.append(el('div', 'question-title', card.title));
      box.append(el('div', 'question-body', card.body));
      for (const option of card.options) {
        const button = el('button', `option ${option}`, option);
        button.disabled = card.answered || snapshot.busy;
        button.addEventListener('click', () => this.answer(card.questionId, option));
        box.append(button);
      }
      this.questionBox.append(box);
    }
  }
}
