import { Artist, Recommendation } from './types';

export interface MixMember {
  index: number;
  id: string;
  name: string;
}

export interface MixEntry {
  name: string;
  members: MixMember[];
  k: number;
  result: Recommendation;
}

export const HISTORY_LIMIT = 20;

/**
 * The workbench draft: a named set of member artists waiting to be
 * submitted as a fictitious artist, plus the session's submission
 * history. History is append-only (old entries are never edited) and
 * capped so a long session cannot grow without bound — the oldest entry
 * falls off first.
 */
export class MixDraft {
  name = 'New mix';
  members: MixMember[] = [];
  history: MixEntry[] = [];

  addMember(artist: Artist): boolean {
    if (this.members.some((m) => m.index === artist.index)) {
      return false;
    }
    this.members.push({ index: artist.index, id: artist.id, name: artist.name });
    return true;
  }

  removeMember(index: number): void {
    this.members = this.members.filter((m) => m.index !== index);
  }

  get canSubmit(): boolean {
    return this.members.length > 0;
  }

  recordResult(k: number, result: Recommendation): MixEntry {
    const entry: MixEntry = {
      name: this.name,
      members: [...this.members],
      k,
      result,
    };
    this.history.push(entry);
    if (this.history.length > HISTORY_LIMIT) {
      this.history.splice(0, this.history.length - HISTORY_LIMIT);
    }
    return entry;
  }
}
