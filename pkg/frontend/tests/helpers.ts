// Shared test scaffolding: an ApiClient wired to a canned route table
// instead of a network, with per-route call counting.
import { ApiClient } from '../src/api';

export interface StubRoute {
  status?: number;
  body: unknown;
  delayMs?: number;
}

export class StubServer {
  calls: string[] = [];
  private routes = new Map<string, StubRoute>();

  route(method: string, path: string, body: unknown, opts: Partial<StubRoute> = {}): void {
    this.routes.set(`${method} ${path}`, { body, ...opts });
  }

  countFor(method: string, path: string): number {
    return this.calls.filter((c) => c === `${method} ${path}`).length;
  }

  client(): ApiClient {
    return new ApiClient('', async (url, init) => {
      const key = `${init?.method ?? 'GET'} ${url}`;
      this.calls.push(key);
      const found = this.routes.get(key);
      if (!found) {
        return jsonResponse(404, { detail: `no stub for ${key}` });
      }
      if (found.delayMs) {
        await new Promise((r) => setTimeout(r, found.delayMs));
      }
      return jsonResponse(found.status ?? 200, found.body);
    });
  }
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export function artist(index: number, name: string, genre: string | null = null) {
  return { index, id: `a${index}`, name, genre };
}

export function mount(): HTMLElement {
  // fresh document per test — querySelector must never see a previous
  // test's tree
  document.body.innerHTML = '';
  const el = document.createElement('div');
  document.body.appendChild(el);
  return el;
}
