/**
 * Parameter panel model: the tracking-metric knobs plus the two width
 * extraction knobs, with the same validity ranges the server enforces.
 * Invalid values never leave the client; validatePanel runs before any
 * request is scheduled and maps each violation to its field.
 */

import type { MetricPatch, WidthPatch } from "./api.js";

export interface PanelParams {
  xi: number;
  zeta: number;
  lambda_data: number;
  cost_mu: number;
  cost_power: number;
  theta_stiffness: number;
  symmetric: boolean;
  sigma: number;
  max_width: number;
}

export const DEFAULT_PANEL: Readonly<PanelParams> = Object.freeze({
  xi: 1.0,
  zeta: 0.1,
  lambda_data: 0.0,
  cost_mu: 100.0,
  cost_power: 2.0,
  theta_stiffness: 8.0,
  symmetric: false,
  sigma: 2.0,
  max_width: 32,
});

export function defaultPanel(): PanelParams {
  return { ...DEFAULT_PANEL };
}

export type PanelField = keyof PanelParams;

/** Field -> violation message; an empty map means every value may be sent. */
export function validatePanel(p: PanelParams): Partial<Record<PanelField, string>> {
  const errors: Partial<Record<PanelField, string>> = {};
  const numeric: Exclude<PanelField, "symmetric">[] = [
    "xi", "zeta", "lambda_data", "cost_mu", "cost_power",
    "theta_stiffness", "sigma", "max_width",
  ];
  for (const field of numeric) {
    const value = p[field];
    if (typeof value !== "number" || !Number.isFinite(value)) {
      errors[field] = "must be a finite number";
    }
  }
  if (typeof p.symmetric !== "boolean") errors.symmetric = "must be a boolean";
  if (errors.xi === undefined && p.xi <= 0) errors.xi = "must be positive";
  if (errors.zeta === undefined && !(p.zeta > 0 && p.zeta <= 1)) {
    errors.zeta = "must lie in (0, 1]";
  }
  if (errors.lambda_data === undefined && p.lambda_data < 0) {
    errors.lambda_data = "must be non-negative";
  }
  if (errors.cost_mu === undefined && p.cost_mu < 0) errors.cost_mu = "must be non-negative";
  if (errors.cost_power === undefined && p.cost_power <= 0) {
    errors.cost_power = "must be positive";
  }
  if (errors.theta_stiffness === undefined && p.theta_stiffness <= 0) {
    errors.theta_stiffness = "must be positive";
  }
  if (errors.sigma === undefined && p.sigma <= 0) errors.sigma = "must be positive";
  if (errors.max_width === undefined && (p.max_width < 1 || !Number.isInteger(p.max_width))) {
    errors.max_width = "must be an integer >= 1";
  }
  return errors;
}

/** The full metric field set for POST /track; sending all of them keeps a
 * re-track independent of whatever defaults the server was started with. */
export function metricPatch(p: PanelParams): Required<MetricPatch> {
  return {
    xi: p.xi,
    zeta: p.zeta,
    lambda_data: p.lambda_data,
    cost_mu: p.cost_mu,
    cost_power: p.cost_power,
    theta_stiffness: p.theta_stiffness,
    symmetric: p.symmetric,
  };
}

export function widthPatch(p: PanelParams): Required<WidthPatch> {
  return { sigma: p.sigma, max_width: p.max_width };
}
