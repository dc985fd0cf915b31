// Shapes mirrored from the service's response models. Every field the UI
// renders comes straight from one of these — nothing is recomputed
// client-side.

export interface Artist {
  index: number;
  id: string;
  name: string;
  genre: string | null;
}

export interface Recommended {
  id: string;
  name: string;
  distance: number;
  genre: string | null;
}

export interface Recommendation {
  query_id: string;
  query_name: string;
  items: Recommended[];
}

export interface ProjectionPoint extends Artist {
  x: number;
  y: number;
}

export interface Health {
  status: string;
  artists: number;
  provenance: string;
}

export interface FictitiousRequest {
  name: string;
  members: number[];
  k: number;
  features?: number[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}
