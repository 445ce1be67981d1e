"""Closed-form pointwise theory oracle for the double-sigmoid surrogate at
sharpness 1, plus brute-force verifiers.

Conventions.  sigma(a) = 1/(1+e^a) (decreasing), zeta = tanh(rho/2), and for
a point with posterior eta = P(y=+1|x) the conditional surrogate risk of a
score z at fixed bandwidth rho is

    r_eta(z) = 2(1-eta) + (2 eta - 2d) sigma(z+rho) + 2(eta+d-1) sigma(z-rho).

Writing s = 2 eta - 1 and c = 1 - 2d, the critical points of r_eta in
K = tanh(z/2) solve s K^2 zeta^2 - 2 c K zeta + s = 0.  Exactly one root has
|K zeta| <= 1, namely u2 = (c - sqrt(c^2 - s^2)) / s; it lies inside (-1, 1)
as a tanh value (and is then the unique interior minimizer) precisely when

    |s| < s_range(d, zeta) = 2 c zeta / (1 + zeta^2).

Outside that window r_eta is monotone and its infimum sits at z -> -inf
(s < 0) or z -> +inf (s > 0) with limit values 2 eta and 2(1-eta).  The
interior minimizer additionally stays inside the band [-rho, rho] only when
|s| <= 2 c zeta^2 / (1 + zeta^4), a strictly smaller window.  Both windows
equal c only in the zeta -> 1 limit; these facts drive the piecewise forms
below and are exactly what the brute-force checks confirm.

Sharpness values other than 1 rescale (z, rho) -> (gamma z, gamma rho); the
oracle itself is pinned to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import ConfigError
from .network import Decision


class DegenerateBandError(ValueError):
    """rho = 0 collapses the rejection band; no finite interior minimizer
    exists for eta != 1/2 (the convention z* = 0 applies only at eta = 1/2)."""


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationContext:
    eta: float
    d: float
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 < self.d < 0.5:
            raise DomainError(f"d must lie in (0, 0.5), got {self.d}")
        if not self.rho >= 0.0:
            raise DomainError(f"rho must be nonnegative, got {self.rho}")

    @property
    def zeta(self) -> float:
        return math.tanh(self.rho / 2.0)


@dataclass(frozen=True)
class OptimalScore:
    """Minimizer of the conditional risk; 'finite' carries z*, otherwise the
    infimum is approached as z -> +/- infinity (tagged, never a float inf)."""
    kind: str            # "finite" | "pos_unbounded" | "neg_unbounded"
    z: float | None = None

    @property
    def finite(self) -> bool:
        return self.kind == "finite"

    def decision(self, rho: float) -> Decision:
        if self.kind == "pos_unbounded":
            return Decision.POS
        if self.kind == "neg_unbounded":
            return Decision.NEG
        if abs(self.z) <= rho:
            return Decision.REJECT
        return Decision.POS if self.z > rho else Decision.NEG


def _sigma(a):
    return 1.0 / (1.0 + np.exp(np.clip(a, -500.0, 500.0)))


def conditional_risk(z, ctx: CalibrationContext):
    """Expected surrogate loss at score z for posterior eta, bandwidth rho."""
    eta, d, rho = ctx.eta, ctx.d, ctx.rho
    z = np.asarray(z, dtype=np.float64)
    out = 2.0 * (1.0 - eta) + (2.0 * eta - 2.0 * d) * _sigma(z + rho) \
        + 2.0 * (eta + d - 1.0) * _sigma(z - rho)
    return out if out.ndim else float(out)


def score_range_window(d: float, zeta: float) -> float:
    """Largest |2 eta - 1| with a finite interior minimizer."""
    c = 1.0 - 2.0 * d
    return 2.0 * c * zeta / (1.0 + zeta * zeta)


def band_window(d: float, zeta: float) -> float:
    """Largest |2 eta - 1| whose finite minimizer lies inside [-rho, rho]."""
    c = 1.0 - 2.0 * d
    return 2.0 * c * zeta * zeta / (1.0 + zeta ** 4)


def optimal_score(ctx: CalibrationContext) -> OptimalScore:
    """Minimizer of r_eta at fixed rho (gamma = 1).

    Finite z* = 2 atanh(u2 / zeta), u2 = (c - sqrt(c^2 - s^2)) / s, exists
    exactly when |s| < s_range(d, zeta); otherwise the infimum is one-sided
    (towards -inf for eta < 1/2, +inf for eta > 1/2).  eta = 1/2 gives 0.
    """
    eta, d = ctx.eta, ctx.d
    s = 2.0 * eta - 1.0
    if eta < d:
        return OptimalScore("neg_unbounded")
    if eta > 1.0 - d:
        return OptimalScore("pos_unbounded")
    if s == 0.0:
        return OptimalScore("finite", 0.0)
    zeta = ctx.zeta
    if zeta == 0.0:
        raise DegenerateBandError(
            "rho = 0: conditional risk is monotone for eta != 1/2 (convention z* = 0 holds only at eta = 1/2)")
    if abs(s) >= score_range_window(d, zeta):
        return OptimalScore("pos_unbounded" if s > 0 else "neg_unbounded")
    c = 1.0 - 2.0 * d
    u2 = (c - math.sqrt(c * c - s * s)) / s
    return OptimalScore("finite", 2.0 * math.atanh(u2 / zeta))


def bayes_decision(eta: float, d: float) -> Decision:
    """Generalized Bayes rule: thresholds d and 1-d on eta, closed band."""
    if not 0.0 < d < 0.5:
        raise DomainError(f"d must lie in (0, 0.5), got {d}")
    if eta > 1.0 - d:
        return Decision.POS
    if eta < d:
        return Decision.NEG
    return Decision.REJECT


def h_minus(theta: float, d: float, zeta: float) -> float:
    """Optimal conditional risk at eta = (1+theta)/2 among scores whose sign
    disagrees with 2 eta - 1; constant 1 - zeta + 2 d zeta (attained at 0)."""
    return 1.0 - zeta + 2.0 * d * zeta


def _t_of(theta: float, c: float) -> float:
    # T = c - sqrt(c^2 - theta^2), computed cancellation-free
    disc = c * c - theta * theta
    if disc < 0.0:
        disc = 0.0
    return theta * theta / (c + math.sqrt(disc))


def h_opt(theta: float, d: float, zeta: float) -> float:
    """Optimal conditional risk H((1+theta)/2) = inf_z r_eta(z), theta >= 0.

    Piecewise: 1 + (2d-1) zeta at theta = 0; the closed-form value at the
    interior minimizer for 0 < theta < s_range(d, zeta); 1 - theta beyond
    (the infimum moves to z -> +inf).  The branch point equals 1 - 2d only
    as zeta -> 1.
    """
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    c = 1.0 - 2.0 * d
    if theta == 0.0:
        return 1.0 + (2.0 * d - 1.0) * zeta
    if zeta <= 0.0 or theta >= score_range_window(d, zeta):
        return 1.0 - theta
    T = _t_of(theta, c)
    a_term = ((theta + c) / 2.0) * ((T + zeta * zeta * theta) / (zeta * theta + T * zeta))
    b_term = ((theta - c) / 2.0) * ((T - zeta * zeta * theta) / (zeta * theta - T * zeta))
    return 1.0 - a_term - b_term


def psi(theta: float, d: float, zeta: float) -> float:
    """Excess-risk transform: h_minus - h_opt evaluated branch-wise.

    Exactly 0 at theta = 0; the closed-form middle branch on the finite-
    minimizer window; theta + (2d-1) zeta beyond it.  Continuously
    differentiable across the branch point (slope 0 at 0, slope 1 on the
    linear branch) and convex.
    """
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    if not 0.0 <= zeta < 1.0:
        raise DomainError(f"zeta must lie in [0, 1), got {zeta}")
    if theta == 0.0:
        return 0.0
    if zeta <= 0.0 or theta >= score_range_window(d, zeta):
        return theta + (2.0 * d - 1.0) * zeta
    c = 1.0 - 2.0 * d
    T = _t_of(theta, c)
    a_term = ((theta + c) / 2.0) * ((T + zeta * zeta * theta) / (zeta * theta + T * zeta))
    b_term = ((theta - c) / 2.0) * ((T - zeta * zeta * theta) / (zeta * theta - T * zeta))
    return (2.0 * d - 1.0) * zeta + a_term + b_term


# ---------------------------------------------------------------------------
# Brute-force verifiers

def grid_minimize(ctx: CalibrationContext, lo: float = -20.0, hi: float = 20.0,
                  step: float = 1e-4):
    """Argmin of the conditional risk on a z grid; the window is wide enough
    that the sigmoids saturate past it below 1e-8 effect."""
    z = np.arange(lo, hi + step / 2, step)
    r = conditional_risk(z, ctx)
    i = int(np.argmin(r))
    return float(z[i]), float(r[i])


def surrogate_bayes_risk(ctx: CalibrationContext) -> float:
    """inf_z r_eta(z) via the closed form (brute-force checked by h_opt tests)."""
    eta = ctx.eta
    theta = abs(2.0 * eta - 1.0)
    if eta < ctx.d or eta > 1.0 - ctx.d:
        return 1.0 - theta  # min(2 eta, 2(1-eta))
    return h_opt(theta, ctx.d, ctx.zeta)


def zero_d_one_conditional(decision: Decision, eta: float, d: float) -> float:
    if decision == Decision.POS:
        return 1.0 - eta
    if decision == Decision.NEG:
        return eta
    return d


def oracle_agreement_grid(etas=None, ds=None, rhos=None) -> dict:
    """Compare the closed-form optimal score against grid minimization and the
    generalized Bayes decision over a parameter grid.

    Returns per-cell records plus worst-case gaps.  A finite closed form is
    compared to the grid argmin; an unbounded one expects the argmin at the
    grid edge.  The induced decision (sign/band of z* against rho) is checked
    against the Bayes rule; agreement genuinely fails where the bandwidth is
    small relative to |2 eta - 1| (see module docstring), so the agreement
    rate is reported rather than assumed.
    """
    etas = np.round(np.arange(0.05, 0.951, 0.05), 2) if etas is None else etas
    ds = [0.1, 0.2, 0.3, 0.4] if ds is None else ds
    rhos = [0.25, 0.5, 1.0, 2.0] if rhos is None else rhos
    cells = []
    worst_gap = 0.0
    agree = 0
    for d in ds:
        for rho in rhos:
            for eta in etas:
                ctx = CalibrationContext(eta=float(eta), d=float(d), rho=float(rho))
                zs = optimal_score(ctx)
                zg, rg = grid_minimize(ctx)
                if zs.finite:
                    gap = abs(zs.z - zg)
                    value_ok = gap <= 2e-4
                    worst_gap = max(worst_gap, gap)
                else:
                    gap = None
                    value_ok = abs(zg) >= 19.99  # edge of the window
                induced = zs.decision(rho)
                bayes = bayes_decision(eta, d)
                ok = induced == bayes
                agree += ok
                cells.append({
                    "eta": float(eta), "d": float(d), "rho": float(rho),
                    "z_closed": zs.z if zs.finite else zs.kind,
                    "z_grid": zg, "gap": gap, "value_ok": bool(value_ok),
                    "induced": int(induced), "bayes": int(bayes),
                    "decision_agrees": bool(ok),
                })
    return {
        "cells": cells,
        "n_cells": len(cells),
        "value_matches": all(c["value_ok"] for c in cells),
        "worst_finite_gap": worst_gap,
        "decision_agreement_rate": agree / len(cells),
        "decision_disagreements": len(cells) - agree,
    }


def verify_excess_risk_bound(distribution, f, rho: float, d: float,
                             slack: float = 1e-9) -> dict:
    """Check psi(excess 0-d-1 risk) <= excess surrogate risk on a finite
    distribution.

    distribution is a list of (weight, eta) atoms with weights summing to 1;
    f maps an atom index to a score.  Both sides are exact expectations: the
    0-d-1 Bayes risk comes from the generalized Bayes rule, the surrogate
    reference from the pointwise conditional-risk infimum.
    """
    weights = np.array([w for w, _ in distribution], dtype=np.float64)
    etas = np.array([e for _, e in distribution], dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-12 or (weights < 0).any():
        raise DomainError("atom weights must be nonnegative and sum to 1")
    zeta = math.tanh(rho / 2.0)
    r_d = r_ds = bayes_d = opt_ds = 0.0
    for i, (w, eta) in enumerate(zip(weights, etas)):
        ctx = CalibrationContext(eta=float(eta), d=d, rho=rho)
        z = float(f(i))
        dec = Decision.REJECT if abs(z) <= rho else (Decision.POS if z > rho else Decision.NEG)
        r_d += w * zero_d_one_conditional(dec, eta, d)
        bayes_d += w * zero_d_one_conditional(bayes_decision(eta, d), eta, d)
        r_ds += w * conditional_risk(z, ctx)
        opt_ds += w * surrogate_bayes_risk(ctx)
    theta = max(r_d - bayes_d, 0.0)
    lhs = psi(min(theta, 1.0), d, zeta)
    rhs = r_ds - opt_ds
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + slack),
            "excess_zero_d_one": theta, "excess_surrogate": rhs}
