// Scripted-session contract tests against the mock server: committed-state
// renderings, one confirmations request per answered batch, threshold
// staging, and the single-writer guard.

import { mkdirSync, writeFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';
import { describe, expect, it } from 'vitest';

import { ServiceClient } from '../src/api.js';
import { exportTranscript, exportTranscriptJson } from '../src/export.js';
import { SessionController } from '../src/session.js';
import { statePanelModel, questionCards } from '../src/viewmodel.js';
import { MockServer, scriptedSession } from './mock_server.js';

const HERE = dirname(fileURLToPath(import.meta.url));

function makeController(server: MockServer): SessionController {
  const client = new ServiceClient({ baseUrl: 'http://mock', fetchImpl: server.fetchImpl });
  return new SessionController(client, 'toy');
}

describe('scripted console session', () => {
  it('runs two turns with three questions, one answer of each kind', async () => {
    const server = new MockServer(scriptedSession());
    const controller = makeController(server);
    await controller.start();

    // turn 1: two questions block commitment
    const turn1 = await controller.sendTurn('a hotel in the north rated 2 stars');
    expect(turn1.friction_questions).toHaveLength(2);
    let snapshot = controller.snapshot();
    expect(snapshot.committed).toBe(false);
    let panel = statePanelModel(snapshot);
    expect(panel.committedIndicator).toBe(false);
    // modal shows exactly two cards
    expect(questionCards(snapshot)).toHaveLength(2);
    // ghost row for the missing-slot candidate, amber for the doubted pair
    const ghost = panel.rows.find((r) => r.status === 'ghost');
    expect(ghost?.slot).toBe('hotel-parking');
    const amber = panel.rows.find((r) => r.amber);
    expect(amber?.slot).toBe('hotel-area');

    // answering the first card stages it without a network call
    const partial = await controller.answerQuestion('q0', { kind: 'update', value: 'south' });
    expect(partial).toBeNull();
    expect(server.confirmationsCalls).toBe(0);
    expect(questionCards(controller.snapshot())[0].answered).toBe(true);

    // answering the last card fires exactly one confirmations request
    const confirmed = await controller.answerQuestion('q1', { kind: 'agree' });
    expect(server.confirmationsCalls).toBe(1);
    expect(confirmed?.committed_state).toEqual({
      'hotel-area': 'south', 'hotel-stars': '2', 'hotel-parking': 'yes',
    });
    snapshot = controller.snapshot();
    expect(snapshot.committed).toBe(true);
    panel = statePanelModel(snapshot);
    expect(panel.committedIndicator).toBe(true);
    expect(panel.rows.map((r) => [r.slot, r.value])).toEqual([
      ['hotel-area', 'south'], ['hotel-parking', 'yes'], ['hotel-stars', '2'],
    ]);
    expect(panel.rows.find((r) => r.slot === 'hotel-parking')?.badge).toBe('added');

    // turn 2: one question, answered with delete
    await controller.sendTurn('actually forget the stars');
    const deleted = await controller.answerQuestion('q0', { kind: 'delete' });
    expect(server.confirmationsCalls).toBe(2);
    expect(deleted?.committed_state).toEqual({ 'hotel-area': 'south', 'hotel-parking': 'yes' });
    panel = statePanelModel(controller.snapshot());
    expect(panel.rows.map((r) => r.slot)).toEqual(['hotel-area', 'hotel-parking']);
    expect(panel.removedRows.map((r) => r.slot)).toEqual(['hotel-stars']);

    // export round-trips the transcript with per-turn committed states
    const corpus = exportTranscript(controller.ontology, controller.snapshot().transcript);
    expect(corpus.dialogues[0].turns).toHaveLength(2);
    expect(corpus.dialogues[0].turns[0].state).toEqual({
      'hotel-area': 'south', 'hotel-stars': '2', 'hotel-parking': 'yes',
    });
    expect(corpus.dialogues[0].turns[1].state).toEqual({
      'hotel-area': 'south', 'hotel-parking': 'yes',
    });
    const artifact = join(HERE, '..', 'test_artifacts', 'export_sample.json');
    mkdirSync(dirname(artifact), { recursive: true });
    writeFileSync(artifact, exportTranscriptJson(controller.ontology, controller.snapshot().transcript));
  });

  it('disagree on a missing-slot candidate keeps it out of the panel', async () => {
    const server = new MockServer(scriptedSession());
    const controller = makeController(server);
    await controller.start();
    await controller.sendTurn('turn one');
    await controller.answerQuestion('q0', { kind: 'agree' });
    const confirmed = await controller.answerQuestion('q1', { kind: 'disagree' });
    expect(confirmed?.committed_state).toEqual({ 'hotel-area': 'north', 'hotel-stars': '2' });
    const rows = statePanelModel(controller.snapshot()).rows;
    expect(rows.map((r) => r.slot)).not.toContain('hotel-parking');
  });

  it('blocks a new turn while questions are pending', async () => {
    const server = new MockServer(scriptedSession());
    const controller = makeController(server);
    await controller.start();
    await controller.sendTurn('turn one');
    await expect(controller.sendTurn('turn two')).rejects.toThrow(/pending questions/);
  });

  it('stages threshold changes and applies them before the next turn', async () => {
    const server = new MockServer([
      { predicted: {}, probabilities: {}, questions: [] },
      { predicted: {}, probabilities: {}, questions: [] },
    ]);
    const controller = makeController(server);
    await controller.start();
    controller.adjustThresholds(0.2, 0.6);
    expect(server.countCalls('/thresholds')).toBe(0); // not sent yet
    await controller.sendTurn('first');
    expect(server.countCalls('/thresholds')).toBe(1);
    const call = server.calls.find((c) => c.path.endsWith('/thresholds'));
    expect(call?.body).toEqual({ tau_fp: 0.2, tau_fn: 0.6 });
    expect(controller.snapshot().thresholds).toEqual({ tau_fp: 0.2, tau_fn: 0.6 });
    await controller.sendTurn('second');
    expect(server.countCalls('/thresholds')).toBe(1); // no re-send without change
  });

  it('rejects answers for unknown question ids', async () => {
    const server = new MockServer(scriptedSession());
    const controller = makeController(server);
    await controller.start();
    await controller.sendTurn('turn one');
    await expect(controller.answerQuestion('q9', { kind: 'agree' })).rejects.toThrow(/unknown question/);
  });

  it('guards against concurrent requests', async () => {
    const server = new MockServer([{ predicted: {}, probabilities: {}, questions: [] }]);
    const controller = makeController(server);
    await controller.start();
    const first = controller.sendTurn('one');
    await expect(controller.sendTurn('two')).rejects.toThrow(/in flight/);
    await first;
  });
});
