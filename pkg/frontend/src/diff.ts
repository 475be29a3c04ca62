/**
 * Side-by-side feature rows for one (original, counterfactual) pair.
 * Deltas are shown in raw decoded units because that's what a human
 * feasibility judgment operates on.
 */

import type { QueryPayload } from "./api";

export interface FeatureRow {
  name: string;
  original: string;
  counterfactual: string;
  changed: boolean;
  /** numeric delta for continuous features, null for categorical */
  delta: number | null;
}

const EPS = 1e-9;

function fmt(v: number | string): string {
  if (typeof v === "number") {
    return Number.isInteger(v) ? String(v) : v.toFixed(3);
  }
  return v;
}

export function diffRows(query: QueryPayload): FeatureRow[] {
  return query.feature_order.map((name) => {
    const a = query.x[name];
    const b = query.cf[name];
    let changed: boolean;
    let delta: number | null = null;
    if (typeof a === "number" && typeof b === "number") {
      delta = b - a;
      changed = Math.abs(delta) > EPS;
      if (!changed) delta = 0;
    } else {
      changed = String(a) !== String(b);
    }
    return { name, original: fmt(a), counterfactual: fmt(b), changed, delta };
  });
}

export function fmtDelta(delta: number | null): string {
  if (delta === null) return "";
  if (delta === 0) return "±0";
  const s = delta > 0 ? "+" : "";
  return `${s}${Number.isInteger(delta) ? delta : delta.toFixed(3)}`;
}

/** Probability of the target class under the frozen model, as a percent. */
export function scorePercent(scores: number[], targetClass: number): string {
  const p = scores[targetClass] ?? 0;
  return `${(100 * p).toFixed(1)}%`;
}
