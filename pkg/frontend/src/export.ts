// Transcript export in the tracker's native corpus format, loadable by the
// backend corpus loader without diagnostics.

import { Ontology, StateMap } from './types.js';
import { TranscriptTurn } from './session.js';

export interface NativeCorpus {
  split: 'train' | 'validation' | 'test';
  ontology: { slots: Array<{ domain: string; slot: string; values: string[] | null }> };
  dialogues: Array<{
    id: string;
    turns: Array<{ system: string; user: string; state: StateMap }>;
  }>;
}

function normalize(value: string): string {
  return value.toLowerCase().trim().replace(/\s+/g, ' ');
}

export function exportTranscript(
  ontology: Ontology,
  transcript: TranscriptTurn[],
  dialogueId = 'console_session',
): NativeCorpus {
  const known = new Set(ontology.slots.map((s) => `${s.domain}-${s.slot}`));
  return {
    split: 'test',
    ontology: {
      slots: ontology.slots.map((s) => ({ domain: s.domain, slot: s.slot, values: s.values })),
    },
    dialogues: [
      {
        id: dialogueId,
        turns: transcript.map((turn) => {
          const state: StateMap = {};
          for (const [slot, value] of Object.entries(turn.committedState)) {
            if (!known.has(slot)) throw new Error(`state references unknown slot ${slot}`);
            state[slot] = normalize(value);
          }
          return { system: normalize(turn.system), user: normalize(turn.user), state };
        }),
      },
    ],
  };
}

export function exportTranscriptJson(
  ontology: Ontology,
  transcript: TranscriptTurn[],
  dialogueId = 'console_session',
): string {
  return JSON.stringify(exportTranscript(ontology, transcript, dialogueId), null, 1) + '\n';
}
