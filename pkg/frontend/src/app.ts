import { ApiClient } from './api';
import { ScatterView } from './scatter';
import { SearchPanel } from './search';
import { MixWorkbench } from './workbench';
import { Artist, Recommendation } from './types';

// Entry point: wires the three panels to one shared client. All state
// that matters lives server-side; the only client state is the mix
// draft and its session history.

export function boot(root: HTMLElement, api = new ApiClient()): AppShell {
  return new AppShell(root, api);
}

export class AppShell {
  private banner: HTMLElement;
  private detail: HTMLElement;
  readonly workbench: MixWorkbench;
  readonly scatter: ScatterView;
  readonly search: SearchPanel;

  constructor(root: HTMLElement, private api: ApiClient) {
    root.innerHTML = `
      <div class="app-banner" hidden></div>
      <header><h1>Artist explorer</h1><span class="app-meta"></span></header>
      <main>
        <section class="pane pane-search"><h2>Search</h2><div class="search-root"></div>
          <div class="detail-root"></div></section>
        <section class="pane pane-bench"><h2>Mix workbench</h2><div class="bench-root"></div></section>
        <section class="pane pane-map"><h2>Map</h2><div class="scatter-root"></div></section>
      </main>`;
    this.banner = root.querySelector('.app-banner')!;
    this.detail = root.querySelector('.detail-root')!;

    const handlers = {
      onAdd: (a: Artist) => this.workbench.addMember(a),
      onOpen: (a: Artist) => void this.openArtist(a.id, a.name),
      onError: (err: unknown) => this.showBanner(err),
    };
    this.search = new SearchPanel(root.querySelector('.search-root')!, api, handlers);
    this.workbench = new MixWorkbench(root.querySelector('.bench-root')!, api);
    this.scatter = new ScatterView(root.querySelector('.scatter-root')!, api, {
      onPick: (p) => void this.openArtist(p.id, p.name),
      onError: (err) => this.showBanner(err),
    });

    void this.start(root);
  }

  private async start(root: HTMLElement): Promise<void> {
    try {
      const health = await this.api.health();
      root.querySelector('.app-meta')!.textContent =
        `${health.artists} artists · ${health.provenance}`;
      this.banner.hidden = true;
    } catch (err) {
      this.showBanner(err, () => void this.start(root));
      return;
    }
    await this.scatter.load();
  }

  private showBanner(err: unknown, retry?: () => void): void {
    this.banner.innerHTML = '';
    this.banner.append(`Service unreachable: ${String(err)} `);
    const btn = document.createElement('button');
    btn.textContent = 'Retry';
    btn.addEventListener('click', retry ?? (() => location.reload()));
    this.banner.appendChild(btn);
    this.banner.hidden = false;
  }

  /** One recommendation request per invocation; renders into the detail pane. */
  async openArtist(id: string, name: string): Promise<void> {
    let rec: Recommendation;
    try {
      rec = await this.api.recommend(id, 10);
    } catch (err) {
      this.showBanner(err);
      return;
    }
    const rows = rec.items
      .map((it) => `<li>${it.name} <span class="dist">${it.distance.toFixed(4)}</span></li>`)
      .join('');
    this.detail.innerHTML = `<h3>Similar to ${name}</h3><ol>${rows}</ol>`;
  }
}

// In the browser the bundle boots itself; under tests the module is
// imported and boot() is called with a fixture client instead.
if (typeof document !== 'undefined' && document.getElementById('app')) {
  boot(document.getElementById('app')!);
}
