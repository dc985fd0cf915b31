import { ApiClient } from './api';
import { Artist } from './types';

export interface SearchHandlers {
  onAdd(artist: Artist): void;
  onOpen(artist: Artist): void;
  onError(err: unknown): void;
}

const DEBOUNCE_MS = 200;

/**
 * Name search with debounced querying. An empty box never issues a
 * request; a query with no hits renders an explicit empty state rather
 * than a blank panel. Clicking a row opens the artist's detail view,
 * the + button adds it to the mix draft, Enter adds the first hit.
 */
export class SearchPanel {
  private input: HTMLInputElement;
  private list: HTMLElement;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private results: Artist[] = [];

  constructor(
    root: HTMLElement,
    private api: ApiClient,
    private handlers: SearchHandlers,
  ) {
    root.innerHTML = `
      <input type="search" class="search-input" placeholder="Search artists…" />
      <ul class="search-results"></ul>`;
    this.input = root.querySelector('.search-input')!;
    this.list = root.querySelector('.search-results')!;

    this.input.addEventListener('input', () => this.schedule());
    this.input.addEventListener('keydown', (ev) => {
      if (ev.key === 'Enter' && this.results.length > 0) {
        this.handlers.onAdd(this.results[0]);
      }
    });
  }

  private schedule(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.run();
    }, DEBOUNCE_MS);
  }

  /** Runs the current box content immediately (tests call this directly). */
  async run(): Promise<void> {
    const q = this.input.value.trim();
    if (q === '') {
      this.results = [];
      this.list.innerHTML = '';
      return;
    }
    try {
      this.results = await this.api.searchArtists(q);
    } catch (err) {
      this.handlers.onError(err);
      return;
    }
    this.render();
  }

  private render(): void {
    this.list.innerHTML = '';
    if (this.results.length === 0) {
      const li = document.createElement('li');
      li.className = 'search-empty';
      li.textContent = 'No matching artists.';
      this.list.appendChild(li);
      return;
    }
    for (const artist of this.results) {
      const li = document.createElement('li');
      li.className = 'search-hit';

      const name = document.createElement('span');
      name.className = 'hit-name';
      name.textContent = artist.genre ? `${artist.name} — ${artist.genre}` : artist.name;
      name.addEventListener('click', () => this.handlers.onOpen(artist));

      const add = document.createElement('button');
      add.className = 'hit-add';
      add.textContent = '+';
      add.title = 'Add to mix';
      add.addEventListener('click', () => this.handlers.onAdd(artist));

      li.append(name, add);
      this.list.appendChild(li);
    }
  }
}
