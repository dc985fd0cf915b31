import {
  ApiError,
  Artist,
  FictitiousRequest,
  Health,
  ProjectionPoint,
  Recommendation,
} from './types';

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin typed client for the recommendation service.
 *
 * Identical requests issued while an earlier one is still in flight are
 * coalesced onto the same promise (keyed by method + url + body), so a
 * double-clicked button or an overlapping hover/click pair costs one
 * round-trip. Nothing is cached after settlement — the server owns all
 * state.
 */
export class ApiClient {
  private inflight = new Map<string, Promise<unknown>>();

  constructor(
    private base: string = '',
    private fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  health(): Promise<Health> {
    return this.request('GET', '/api/health');
  }

  searchArtists(q: string): Promise<Artist[]> {
    return this.request('GET', `/api/artists?q=${encodeURIComponent(q)}`);
  }

  artist(id: string): Promise<Artist> {
    return this.request('GET', `/api/artists/${encodeURIComponent(id)}`);
  }

  recommend(id: string, k = 5): Promise<Recommendation> {
    return this.request('GET', `/api/recommend/${encodeURIComponent(id)}?k=${k}`);
  }

  fictitious(body: FictitiousRequest): Promise<Recommendation> {
    return this.request('POST', '/api/fictitious', body);
  }

  projection(): Promise<ProjectionPoint[]> {
    return this.request('GET', '/api/projection');
  }

  /** Number of requests currently in flight (visible for tests). */
  get pending(): number {
    return this.inflight.size;
  }

  private request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const key = `${method} ${path} ${body === undefined ? '' : JSON.stringify(body)}`;
    const existing = this.inflight.get(key);
    if (existing) {
      return existing as Promise<T>;
    }
    const p = this.send<T>(method, path, body).finally(() => {
      this.inflight.delete(key);
    });
    this.inflight.set(key, p);
    return p;
  }

  private async send<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { 'Content-Type': 'application/json' };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = await resp.json();
        if (parsed && typeof parsed.detail === 'string') detail = parsed.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }
}
