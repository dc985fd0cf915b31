import { ApiClient } from './api';
import { HISTORY_LIMIT, MixDraft } from './state';
import { ApiError, Recommendation } from './types';

/**
 * The what-if bench: build a member set, name it, submit it as a
 * fictitious artist, and read the recommendations that come back. Every
 * submission lands in the history strip so successive mixes can be
 * compared side by side; selecting an old entry re-renders its stored
 * result without a new request.
 */
export class MixWorkbench {
  readonly draft = new MixDraft();

  private memberList: HTMLElement;
  private nameInput: HTMLInputElement;
  private kInput: HTMLInputElement;
  private submitBtn: HTMLButtonElement;
  private errorBox: HTMLElement;
  private resultBox: HTMLElement;
  private historyList: HTMLElement;

  constructor(root: HTMLElement, private api: ApiClient) {
    root.innerHTML = `
      <div class="bench-form">
        <input class="mix-name" value="New mix" />
        <label>k <input class="mix-k" type="number" min="1" value="5" /></label>
        <button class="mix-submit" disabled>Create fictitious artist</button>
      </div>
      <ul class="mix-members"></ul>
      <div class="bench-error" hidden></div>
      <div class="bench-result"></div>
      <div class="bench-history">
        <h3>Session history</h3>
        <ol class="history-entries"></ol>
      </div>`;
    this.memberList = root.querySelector('.mix-members')!;
    this.nameInput = root.querySelector('.mix-name')!;
    this.kInput = root.querySelector('.mix-k')!;
    this.submitBtn = root.querySelector('.mix-submit')!;
    this.errorBox = root.querySelector('.bench-error')!;
    this.resultBox = root.querySelector('.bench-result')!;
    this.historyList = root.querySelector('.history-entries')!;

    this.nameInput.addEventListener('input', () => {
      this.draft.name = this.nameInput.value;
    });
    this.submitBtn.addEventListener('click', () => void this.submit());
  }

  addMember(artist: { index: number; id: string; name: string; genre: string | null }): void {
    if (this.draft.addMember(artist)) {
      this.renderMembers();
    }
  }

  private renderMembers(): void {
    this.memberList.innerHTML = '';
    for (const m of this.draft.members) {
      const li = document.createElement('li');
      li.className = 'mix-member';
      li.textContent = m.name + ' ';
      const rm = document.createElement('button');
      rm.className = 'member-remove';
      rm.textContent = '×';
      rm.addEventListener('click', () => {
        this.draft.removeMember(m.index);
        this.renderMembers();
      });
      li.appendChild(rm);
      this.memberList.appendChild(li);
    }
    this.submitBtn.disabled = !this.draft.canSubmit;
  }

  async submit(): Promise<void> {
    if (!this.draft.canSubmit) return;
    this.errorBox.hidden = true;
    const k = Math.max(1, Number(this.kInput.value) || 5);
    try {
      const rec = await this.api.fictitious({
        name: this.draft.name,
        members: this.draft.members.map((m) => m.index),
        k,
      });
      const entry = this.draft.recordResult(k, rec);
      this.renderResult(entry.result);
      this.renderHistory();
    } catch (err) {
      // surface the server's own message next to the form instead of
      // swallowing it or bouncing the whole page
      this.errorBox.textContent =
        err instanceof ApiError ? err.detail : `request failed: ${String(err)}`;
      this.errorBox.hidden = false;
    }
  }

  private renderResult(rec: Recommendation): void {
    const rows = rec.items
      .map(
        (it) => `
        <tr>
          <td class="r-name">${escapeHtml(it.name)}</td>
          <td class="r-genre">${escapeHtml(it.genre ?? '—')}</td>
          <td class="r-distance">${it.distance.toFixed(4)}</td>
        </tr>`,
      )
      .join('');
    this.resultBox.innerHTML = `
      <h3>${escapeHtml(rec.query_name)}</h3>
      <table class="result-table">
        <thead><tr><th>Artist</th><th>Genre</th><th>Distance</th></tr></thead>
        <tbody>${rows}</tbody>
      </table>`;
  }

  private renderHistory(): void {
    this.historyList.innerHTML = '';
    // newest first; the cap means at most HISTORY_LIMIT entries exist
    const entries = [...this.draft.history].reverse();
    for (const entry of entries) {
      const li = document.createElement('li');
      const btn = document.createElement('button');
      btn.className = 'history-entry';
      btn.textContent = `${entry.name} (${entry.members.map((m) => m.name).join(', ')}) k=${entry.k}`;
      btn.addEventListener('click', () => this.renderResult(entry.result));
      li.appendChild(btn);
      this.historyList.appendChild(li);
    }
    const note = this.historyList.parentElement!.querySelector('.history-note');
    if (this.draft.history.length >= HISTORY_LIMIT && !note) {
      const p = document.createElement('p');
      p.className = 'history-note';
      p.textContent = `Keeping the last ${HISTORY_LIMIT} mixes.`;
      this.historyList.parentElement!.appendChild(p);
    }
  }

  /** Current result table rows as [name, genre, distance] strings (for tests). */
  resultRows(): string[][] {
    return Array.from(this.resultBox.querySelectorAll('tbody tr')).map((tr) =>
      Array.from(tr.querySelectorAll('td')).map((td) => td.textContent ?? ''),
    );
  }
}

function escapeHtml(s: string): string {
  return s
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}
