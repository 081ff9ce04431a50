"""Closed-form team quantities: threshold, correction, weights, bounds.

Every function here is a pure formula in the pair summary statistics
(accuracies, sensitivities, error correlation).  The threshold formula is
exact only in the symmetric near-chance regime; outside it the value is
clamped into [0, 1] and flagged, and the Monte Carlo engine provides the
empirical threshold instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

from scipy.special import ndtr, ndtri

__all__ = [
    "RegimeFlag",
    "BoundsReport",
    "DegenerateInputError",
    "rho_star",
    "kappa",
    "optimal_weights",
    "optimal_team_accuracy",
    "max_gain",
    "minimax_interval",
    "variance_bound",
    "rho_star_k",
    "rho_star_miscal",
    "bounds_report",
    "NEAR_CHANCE_MAX_ACCURACY",
]

# Validity boundary for the near-chance threshold formula.  Chosen so that
# inside it the Monte Carlo threshold estimate agrees with the formula to
# within 0.1 (tunable; see the phase sweep in the verification suite).
NEAR_CHANCE_MAX_ACCURACY = 0.65


class RegimeFlag:
    NEAR_CHANCE_VALID = "near_chance_valid"
    EXTRAPOLATED = "extrapolated"


class DegenerateInputError(ValueError):
    """Inputs outside the formulas' domain (accuracy 0/1, zero denominator)."""


def rho_star(a_h: float, a_m: float) -> tuple[float, str]:
    """Complementarity threshold on the error correlation.

    Returns the threshold clamped to [0, 1] plus a regime flag; the flag
    is ``extrapolated`` when the raw value leaves [0, 1] or the pair sits
    outside the symmetric near-chance regime.
    """
    for a in (a_h, a_m):
        if not 0.0 < a < 1.0:
            raise DegenerateInputError(f"accuracy must be in (0, 1), got {a}")
    e_h, e_m = 1.0 - a_h, 1.0 - a_m
    a_star, a_minus = max(a_h, a_m), min(a_h, a_m)
    e_star = min(e_h, e_m)
    raw = e_star * (a_minus - a_star + a_star * a_minus) / (e_h * e_m)
    flag = RegimeFlag.NEAR_CHANCE_VALID
    if not 0.0 <= raw <= 1.0 or min(a_h, a_m) > NEAR_CHANCE_MAX_ACCURACY:
        flag = RegimeFlag.EXTRAPOLATED
    return min(1.0, max(0.0, raw)), flag


def kappa(rho: float) -> float:
    """Correlation correction sqrt(2) * Phi^-1((1 + rho) / 2).

    Zero at rho = 0, strictly increasing, unbounded as rho -> 1.
    """
    if not -1.0 < rho < 1.0:
        raise DegenerateInputError(
            f"correction is unbounded at |rho| = 1 (got rho={rho})"
        )
    return math.sqrt(2.0) * float(ndtri((1.0 + rho) / 2.0))


def optimal_weights(d_h: float, d_m: float, rho: float) -> tuple[float, float]:
    """Selection weights w_i = d_i / sqrt(d_H^2 + d_M^2 - 2 rho d_H d_M)."""
    if d_h < 0 or d_m < 0:
        raise DegenerateInputError("sensitivities must be >= 0")
    if d_h == 0 and d_m == 0:
        raise DegenerateInputError("sensitivities must not both be zero")
    denom_sq = d_h * d_h + d_m * d_m - 2.0 * rho * d_h * d_m
    if denom_sq <= 0.0:
        raise DegenerateInputError(
            f"degenerate weights: d_H^2 + d_M^2 - 2 rho d_H d_M = {denom_sq:.3g} <= 0"
        )
    denom = math.sqrt(denom_sq)
    return d_h / denom, d_m / denom


def optimal_team_accuracy(a_star: float, e_star: float, d_minus: float, rho: float) -> float:
    """Predicted best-achievable team accuracy below the threshold."""
    if d_minus < 0:
        raise DegenerateInputError("d_minus must be >= 0")
    return a_star + e_star * float(ndtr((d_minus - kappa(rho)) / math.sqrt(2.0)))


def max_gain(e_star: float, d_minus: float) -> float:
    """Gain ceiling at zero error correlation: e* Phi(d_- / sqrt(2))."""
    if not 0.0 <= e_star <= 1.0:
        raise DegenerateInputError("e_star must be in [0, 1]")
    if d_minus < 0:
        raise DegenerateInputError("d_minus must be >= 0")
    return e_star * float(ndtr(d_minus / math.sqrt(2.0)))


def minimax_interval(delta_d: float, e_star: float) -> tuple[float, float]:
    """Worst-case gain interval; values reported verbatim even if crossed.

    The lower bound can numerically exceed the upper for small e* with
    large sensitivity gaps; callers should check ordering (BoundsReport
    exposes a flag) rather than rely on it.
    """
    if delta_d < 0:
        raise DegenerateInputError("delta_d must be >= 0")
    if not 0.0 <= e_star <= 1.0:
        raise DegenerateInputError("e_star must be in [0, 1]")
    lower = delta_d / (2.0 * math.sqrt(math.pi) * math.sqrt(1.0 + delta_d * delta_d))
    upper = math.sqrt(2.0 / math.pi) * math.sqrt(delta_d * e_star)
    return lower, upper


def variance_bound(e_star: float, rho: float, d_h: float, d_m: float, n: int) -> float:
    """Upper bound on the sampling variance of team accuracy over n trials."""
    if n < 1:
        raise DegenerateInputError("n must be >= 1")
    d_minus = min(d_h, d_m)
    if d_minus <= 0.0:
        raise DegenerateInputError("bound undefined at d_- = 0")
    return (e_star * (1.0 - e_star) / n) * (1.0 + rho * d_h * d_m / (d_minus * d_minus))


def rho_star_k(rho_star_binary: float, k: int) -> float:
    """Threshold for K-class problems: binary threshold / sqrt(K - 1)."""
    if k < 2:
        raise DegenerateInputError(f"class count must be >= 2, got {k}")
    if not 0.0 <= rho_star_binary <= 1.0:
        raise DegenerateInputError("binary threshold must be in [0, 1]")
    return rho_star_binary / math.sqrt(k - 1.0)


def rho_star_miscal(rho_star_value: float, epsilon: float) -> float:
    """Threshold under bounded miscalibration: rho* (1 - 2 epsilon)."""
    if not 0.0 <= epsilon <= 0.5:
        raise DegenerateInputError("epsilon must be in [0, 0.5]")
    return rho_star_value * (1.0 - 2.0 * epsilon)


@dataclass(frozen=True)
class BoundsReport:
    """All closed-form quantities for one pair summary."""

    a_h: float
    a_m: float
    d_h: float
    d_m: float
    rho_hm: float
    rho_star: float
    regime_flag: str
    kappa: float
    w_h: float
    w_m: float
    a_team_pred: float
    max_gain: float
    minimax_lo: float
    minimax_hi: float
    minimax_ordered: bool
    var_bound: float
    achievable: bool

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(asdict(self), indent=indent, sort_keys=True)


def bounds_report(a_h: float, a_m: float, d_h: float, d_m: float, rho_hm: float,
                  n: int = 1) -> BoundsReport:
    """Assemble the full report from pair summary statistics.

    Above the threshold the predicted team accuracy collapses to the
    better individual's accuracy (deferring is then optimal).
    """
    rs, flag = rho_star(a_h, a_m)
    a_star = max(a_h, a_m)
    e_star = min(1.0 - a_h, 1.0 - a_m)
    d_minus = min(d_h, d_m)
    delta_d = abs(d_h - d_m)
    achievable = rho_hm < rs
    kap = kappa(rho_hm)
    w_h, w_m = optimal_weights(d_h, d_m, rho_hm)
    a_pred = optimal_team_accuracy(a_star, e_star, d_minus, rho_hm) if achievable else a_star
    lo, hi = minimax_interval(delta_d, e_star)
    return BoundsReport(
        a_h=a_h, a_m=a_m, d_h=d_h, d_m=d_m, rho_hm=rho_hm,
        rho_star=rs, regime_flag=flag, kappa=kap, w_h=w_h, w_m=w_m,
        a_team_pred=a_pred, max_gain=max_gain(e_star, d_minus),
        minimax_lo=lo, minimax_hi=hi, minimax_ordered=lo <= hi,
        var_bound=variance_bound(e_star, rho_hm, d_h, d_m, n),
        achievable=achievable,
    )
