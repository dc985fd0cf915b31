import { ApiClient } from './api';
import { ProjectionPoint } from './types';

export interface ScatterHandlers {
  onPick(point: ProjectionPoint): void;
  onError(err: unknown): void;
}

const WIDTH = 640;
const HEIGHT = 480;
const MARGIN = 16;
const RADIUS = 4;

// Categorical palette; genres are assigned colors in first-appearance
// order. When the dataset carries no labels at all, every point falls
// back to the neutral color.
const PALETTE = [
  '#4c78a8', '#f58518', '#54a24b', '#e45756', '#72b7b2',
  '#eeca3b', '#b279a2', '#ff9da6', '#9d755d', '#bab0ac',
];
const NEUTRAL = '#6b7280';

/**
 * 2-D map of the whole catalog. Each artist is one circle at the
 * server-computed projection coordinates; hovering names it, clicking
 * hands it to the detail view (one recommendation request per click —
 * the client never recomputes anything locally).
 */
export class ScatterView {
  private svg: SVGSVGElement;
  private legend: HTMLElement;
  private hoverLabel: HTMLElement;
  points: ProjectionPoint[] = [];

  constructor(
    root: HTMLElement,
    private api: ApiClient,
    private handlers: ScatterHandlers,
  ) {
    root.innerHTML = `
      <div class="scatter-hover" aria-live="polite"></div>
      <svg class="scatter-plot" viewBox="0 0 ${WIDTH} ${HEIGHT}"
           preserveAspectRatio="xMidYMid meet"></svg>
      <ul class="scatter-legend"></ul>`;
    this.svg = root.querySelector('svg')!;
    this.legend = root.querySelector('.scatter-legend')!;
    this.hoverLabel = root.querySelector('.scatter-hover')!;
  }

  async load(): Promise<void> {
    try {
      this.points = await this.api.projection();
    } catch (err) {
      this.handlers.onError(err);
      return;
    }
    this.render();
  }

  genreColors(): Map<string, string> {
    const colors = new Map<string, string>();
    for (const p of this.points) {
      if (p.genre !== null && !colors.has(p.genre)) {
        colors.set(p.genre, PALETTE[colors.size % PALETTE.length]);
      }
    }
    return colors;
  }

  private render(): void {
    const colors = this.genreColors();
    const xs = this.points.map((p) => p.x);
    const ys = this.points.map((p) => p.y);
    const sx = scale(Math.min(...xs), Math.max(...xs), MARGIN, WIDTH - MARGIN);
    const sy = scale(Math.min(...ys), Math.max(...ys), HEIGHT - MARGIN, MARGIN);

    this.svg.innerHTML = '';
    for (const p of this.points) {
      const c = document.createElementNS('http://www.w3.org/2000/svg', 'circle');
      c.setAttribute('cx', sx(p.x).toFixed(1));
      c.setAttribute('cy', sy(p.y).toFixed(1));
      c.setAttribute('r', String(RADIUS));
      c.setAttribute('fill', p.genre !== null ? colors.get(p.genre)! : NEUTRAL);
      c.setAttribute('class', 'scatter-point');
      c.dataset.artistId = p.id;
      c.addEventListener('mouseenter', () => {
        this.hoverLabel.textContent = p.genre ? `${p.name} · ${p.genre}` : p.name;
      });
      c.addEventListener('mouseleave', () => {
        this.hoverLabel.textContent = '';
      });
      c.addEventListener('click', () => this.handlers.onPick(p));
      this.svg.appendChild(c);
    }

    this.legend.innerHTML = '';
    for (const [genre, color] of colors) {
      const li = document.createElement('li');
      li.innerHTML = `<span class="swatch" style="background:${color}"></span>${genre}`;
      this.legend.appendChild(li);
    }
  }
}

function scale(lo: number, hi: number, out0: number, out1: number) {
  const span = hi - lo;
  if (span === 0) {
    const mid = (out0 + out1) / 2;
    return (_: number) => mid;
  }
  return (v: number) => out0 + ((v - lo) / span) * (out1 - out0);
}
