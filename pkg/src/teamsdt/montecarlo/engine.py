"""Sweep engine: simulate pair-config grids and score aggregation rules.

A sweep cell is one (accuracy, sensitivity, correlation) configuration;
each cell runs ``replications`` independent studies of ``trials_per_cell``
trials.  Complementarity gains are study-level: every study compares a
rule against the better of the two agents *as observed in that study*,
which is how a finite trial log would be scored.  Gains against the
analytic best-individual accuracy are also recorded.

Cells are independent work units with per-cell derived seeds, so results
do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ..aggregation import (
    BayesAverage,
    BestIndividual,
    ConfidenceWeighted,
    DeferTo,
    MajorityRandomTiebreak,
    team_accuracy,
    tie_coins,
)
from ..bounds import optimal_weights
from ..sdt import (
    InfeasibleCorrelationError,
    PairConfig,
    agent_from_accuracy,
    calibrate_latent_correlation,
    error_correlation,
    implied_accuracy,
    metacog_sensitivity,
    midline_agent,
    simulate_trials,
)

__all__ = [
    "SweepSpec",
    "CellResult",
    "ThresholdEstimate",
    "ThresholdNotBracketedError",
    "RULE_NAMES",
    "rules_for_pair",
    "run_cell",
    "run_sweep",
    "estimate_threshold",
]

RULE_NAMES = ("cw", "bayes", "majority", "defer_h", "defer_m", "best")


class ThresholdNotBracketedError(RuntimeError):
    """The rho grid does not produce a gain sign change."""


@dataclass(frozen=True)
class SweepSpec:
    """Grid specification for one sweep.

    ``rho_kind`` selects the meaning of ``rho_values``: targets on the
    derived binary error correlation (calibrated per cell; infeasible
    targets skip the cell) or raw latent evidence correlations.
    """

    d_values: tuple
    rho_values: tuple
    a_values: tuple | None = None  # None = midline agents (threshold 0)
    rho_kind: str = "error"
    trials_per_cell: int = 100_000
    replications: int = 10
    seed: int = 0
    class_prior: float = 0.5

    def __post_init__(self):
        if self.rho_kind not in ("error", "latent"):
            raise ValueError("rho_kind must be 'error' or 'latent'")
        if not self.d_values or not self.rho_values:
            raise ValueError("empty grid")
        if self.a_values is not None and not self.a_values:
            raise ValueError("empty grid")
        if self.trials_per_cell < 1 or self.replications < 1:
            raise ValueError("trials_per_cell and replications must be >= 1")

    def cells(self):
        a_vals = self.a_values if self.a_values is not None else (None,)
        idx = 0
        for a in a_vals:
            for d in self.d_values:
                for rho in self.rho_values:
                    yield idx, a, d, rho
                    idx += 1


@dataclass
class CellResult:
    """Config echo plus per-rule accuracies and study-level gains."""

    a: float | None
    d: float
    rho_target: float
    rho_kind: str
    n: int
    replications: int
    latent_corr: float | None = None
    rho_hm: float | None = None
    rho_emp: float | None = None
    a_star: float | None = None
    acc: dict = field(default_factory=dict)
    gain: dict = field(default_factory=dict)
    gain_se: dict = field(default_factory=dict)
    gain_reps: dict = field(default_factory=dict)
    gain_oracle: dict = field(default_factory=dict)
    best_rule: str | None = None
    best_gain: float | None = None
    best_gain_se: float | None = None
    p_d: float | None = None
    q_star: float | None = None
    skipped: bool = False
    skip_reason: str = ""

    def to_row(self) -> dict:
        row = {
            "a": self.a, "d": self.d, "rho_target": self.rho_target,
            "rho_kind": self.rho_kind, "n": self.n, "replications": self.replications,
            "latent_corr": self.latent_corr, "rho_hm": self.rho_hm,
            "rho_emp": self.rho_emp, "a_star": self.a_star,
            "p_d": self.p_d, "q_star": self.q_star,
            "best_rule": self.best_rule, "best_gain": self.best_gain,
            "best_gain_se": self.best_gain_se,
            "skipped": int(self.skipped), "skip_reason": self.skip_reason,
        }
        for name in RULE_NAMES:
            row[f"acc_{name}"] = self.acc.get(name)
            row[f"gain_{name}"] = self.gain.get(name)
            row[f"gain_se_{name}"] = self.gain_se.get(name)
            row[f"gain_oracle_{name}"] = self.gain_oracle.get(name)
        return row


def _cell_seed(seed: int, cell_index: int, rep: int) -> int:
    ss = np.random.SeedSequence(entropy=(seed, cell_index, rep))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rules_for_pair(cfg: PairConfig) -> dict:
    """The five rule kinds with oracle parameters for this pair."""
    d_h = metacog_sensitivity(cfg.agent_h)
    d_m = metacog_sensitivity(cfg.agent_m)
    rho = error_correlation(cfg)
    try:
        w_h, w_m = optimal_weights(d_h, d_m, rho)
    except Exception:
        w_h = w_m = 1.0  # degenerate weights: fall back to plain confidence
    return {
        "cw": ConfidenceWeighted(w_h, w_m),
        "bayes": BayesAverage(cfg),
        "majority": MajorityRandomTiebreak(),
        "defer_h": DeferTo("h"),
        "defer_m": DeferTo("m"),
        "best": BestIndividual(),
    }


def build_pair(a: float | None, d: float, class_prior: float = 0.5) -> PairConfig:
    """Symmetric pair for one grid cell (latent correlation set later)."""
    agent = midline_agent(d) if a is None else agent_from_accuracy(a, d, class_prior)
    return PairConfig(agent, agent, 0.0, class_prior)


def run_cell(a: float | None, d: float, rho: float, spec: SweepSpec,
             cell_index: int) -> CellResult:
    res = CellResult(a=a, d=d, rho_target=rho, rho_kind=spec.rho_kind,
                     n=spec.trials_per_cell, replications=spec.replications)
    base = build_pair(a, d, spec.class_prior)
    if spec.rho_kind == "error":
        try:
            r = calibrate_latent_correlation(rho, base.agent_h, base.agent_m,
                                             spec.class_prior)
        except InfeasibleCorrelationError as exc:
            res.skipped = True
            res.skip_reason = str(exc)
            return res
    else:
        r = rho
    cfg = PairConfig(base.agent_h, base.agent_m, r, spec.class_prior)
    res.latent_corr = r
    res.rho_hm = error_correlation(cfg)
    res.a_star = max(implied_accuracy(cfg.agent_h, spec.class_prior),
                     implied_accuracy(cfg.agent_m, spec.class_prior))
    rules = rules_for_pair(cfg)

    acc = {name: [] for name in RULE_NAMES}
    gain = {name: [] for name in RULE_NAMES}
    n_dis = 0
    n_q = 0
    rho_emp_num = 0.0
    for rep in range(spec.replications):
        s = _cell_seed(spec.seed, cell_index, rep)
        td = simulate_trials(cfg, spec.trials_per_cell, s)
        best_obs = max(td.accuracy_h, td.accuracy_m)
        coins = tie_coins(s + 1, len(td))
        dis = td.yhat_h != td.yhat_m
        n_dis += int(dis.sum())
        rho_emp_num += td.empirical_error_correlation()
        for name, rule in rules.items():
            decided = rule.decide_batch(td, coins)
            a_rule = float(np.mean(decided == td.y))
            acc[name].append(a_rule)
            gain[name].append(a_rule - best_obs)
            if name == "cw":
                n_q += int(np.sum((decided == td.y) & dis))
    res.acc = {k: float(np.mean(v)) for k, v in acc.items()}
    res.gain = {k: float(np.mean(v)) for k, v in gain.items()}
    res.gain_se = {
        k: float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        for k, v in gain.items()
    }
    res.gain_reps = {k: [float(x) for x in v] for k, v in gain.items()}
    res.gain_oracle = {k: res.acc[k] - res.a_star for k in acc}
    res.best_rule = max(res.gain, key=res.gain.get)
    res.best_gain = res.gain[res.best_rule]
    res.best_gain_se = res.gain_se[res.best_rule]
    total = spec.trials_per_cell * spec.replications
    res.p_d = n_dis / total
    res.q_star = n_q / n_dis if n_dis else float("nan")
    res.rho_emp = rho_emp_num / spec.replications
    return res


def run_sweep(spec: SweepSpec) -> list[CellResult]:
    """One CellResult per grid cell; infeasible cells marked skipped."""
    return [run_cell(a, d, rho, spec, idx) for idx, a, d, rho in spec.cells()]


def _pava_decreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit, nonincreasing, equal weights."""
    vals = list(-np.asarray(y, dtype=float))
    wts = [1.0] * len(vals)
    out_v, out_w = [], []
    for v, w in zip(vals, wts):
        out_v.append(v)
        out_w.append(w)
        while len(out_v) > 1 and out_v[-2] > out_v[-1]:
            v2, w2 = out_v.pop(), out_w.pop()
            v1, w1 = out_v.pop(), out_w.pop()
            out_v.append((v1 * w1 + v2 * w2) / (w1 + w2))
            out_w.append(w1 + w2)
    fit = np.repeat(out_v, [int(w) for w in out_w])
    return -fit


@dataclass(frozen=True)
class ThresholdEstimate:
    value: float
    ci_lo: float
    ci_hi: float
    rho_grid: tuple
    gains: tuple
    rule: str
    n_bootstrap: int
    n_bootstrap_failed: int


def _crossing_from_gains(rho: np.ndarray, gains: np.ndarray) -> float | None:
    """Downward zero crossing of the isotonic-decreasing fit past the peak.

    The peak is located on a 3-point moving average so a single noisy
    cell cannot start the monotone fit inside the negative tail.
    """
    if len(gains) < 3:
        return None
    smooth = np.convolve(gains, np.ones(3) / 3.0, mode="same")
    smooth[0] = (gains[0] + gains[1]) / 2.0
    smooth[-1] = (gains[-2] + gains[-1]) / 2.0
    peak = int(np.argmax(smooth))
    fit = _pava_decreasing(gains[peak:])
    rho_seg = rho[peak:]
    if fit[0] <= 0.0:
        return None
    below = np.nonzero(fit <= 0.0)[0]
    if len(below) == 0:
        return None
    j = int(below[0])
    g0, g1 = fit[j - 1], fit[j]
    r0, r1 = rho_seg[j - 1], rho_seg[j]
    if g0 == g1:
        return float(r1)
    return float(r0 + (r1 - r0) * g0 / (g0 - g1))


def estimate_threshold(spec: SweepSpec, rule: str = "cw",
                       n_bootstrap: int = 1000) -> ThresholdEstimate:
    """Gain-zero crossing over a rho-only sweep, in error-correlation units.

    Fits an isotonic nonincreasing curve to the study-level gains beyond
    their peak and interpolates the zero crossing; the bootstrap CI
    resamples replications within each cell.
    """
    if (spec.a_values is not None and len(spec.a_values) != 1) or len(spec.d_values) != 1:
        raise ValueError("threshold sweep must vary rho only")
    if len(spec.rho_values) < 8:
        raise ValueError("need at least 8 rho points spanning the sign change")
    cells = run_sweep(spec)
    live = [c for c in cells if not c.skipped]
    if len(live) < 8:
        raise ThresholdNotBracketedError(
            f"only {len(live)} feasible cells; need >= 8 spanning the sign change"
        )
    live.sort(key=lambda c: c.rho_hm)
    rho = np.array([c.rho_hm for c in live])
    gains = np.array([c.gain[rule] for c in live])
    value = _crossing_from_gains(rho, gains)
    if value is None:
        raise ThresholdNotBracketedError(
            "gain curve does not cross zero within the swept range"
        )
    per_rep = [np.asarray(c.gain_reps[rule]) for c in live]
    gen = np.random.Generator(np.random.Philox(key=spec.seed ^ 0x5EED))
    reps = spec.replications
    boots, failed = [], 0
    for _ in range(n_bootstrap):
        g = np.array([
            float(np.mean(r[gen.integers(0, reps, size=reps)])) for r in per_rep
        ])
        cross = _crossing_from_gains(rho, g)
        if cross is None:
            failed += 1
        else:
            boots.append(cross)
    if boots:
        lo, hi = np.percentile(boots, [2.5, 97.5])
    else:
        lo = hi = value
    return ThresholdEstimate(value=float(value), ci_lo=float(lo), ci_hi=float(hi),
                             rho_grid=tuple(float(x) for x in rho),
                             gains=tuple(float(g) for g in gains),
                             rule=rule, n_bootstrap=n_bootstrap,
                             n_bootstrap_failed=failed)
