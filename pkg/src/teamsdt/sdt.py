"""Generative signal-detection model of a correlated two-agent decision team.

Each agent observes a latent Gaussian evidence variable whose mean depends
on the binary ground truth, thresholds it for a hard prediction, and maps
its distance from threshold to a confidence score through the standard
normal CDF.  The two agents' evidence variables are jointly Gaussian given
the truth, with a single latent correlation shared by both classes; the
binary error correlation is a derived quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .bvn import bvn_cdf, bvn_upper

__all__ = [
    "AgentParams",
    "PairConfig",
    "TrialRecord",
    "TrialData",
    "DegenerateAgentError",
    "InfeasibleCorrelationError",
    "metacog_sensitivity",
    "implied_accuracy",
    "confidence_of",
    "joint_error_prob",
    "joint_error_from_correlation",
    "error_correlation",
    "error_correlation_bounds",
    "achievable_error_correlation",
    "calibrate_latent_correlation",
    "simulate_trials",
    "agent_from_accuracy",
    "midline_agent",
    "symmetric_pair",
]

_EPS_PROB = 1e-12


class DegenerateAgentError(ValueError):
    """An agent's error rate is 0 or 1; correlation undefined."""


class InfeasibleCorrelationError(ValueError):
    """Requested error correlation outside the achievable interval."""

    def __init__(self, target: float, lo: float, hi: float):
        self.target = target
        self.achievable = (lo, hi)
        super().__init__(
            f"error correlation {target:.4f} infeasible; "
            f"achievable interval is [{lo:.4f}, {hi:.4f}]"
        )


@dataclass(frozen=True)
class AgentParams:
    """One agent's evidence channel: class means, noise scale, threshold.

    Convention: ``mu1 >= mu0`` (higher evidence means class 1), and the
    canonical constructors normalize ``sigma`` to 1 with ``mu = -/+ d/2``.
    """

    mu0: float
    mu1: float
    sigma: float = 1.0
    tau: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        if not (math.isfinite(self.mu0) and math.isfinite(self.mu1) and math.isfinite(self.tau)):
            raise ValueError("mu0, mu1, tau must be finite")
        if self.mu1 < self.mu0:
            raise ValueError(f"orientation requires mu1 >= mu0, got {self.mu0} > {self.mu1}")


@dataclass(frozen=True)
class PairConfig:
    """Two agents plus the latent evidence correlation given the truth."""

    agent_h: AgentParams
    agent_m: AgentParams
    latent_corr: float = 0.0
    class_prior: float = 0.5

    def __post_init__(self):
        if not abs(self.latent_corr) < 1.0:
            raise ValueError(f"|latent_corr| must be < 1, got {self.latent_corr}")
        if not 0.0 < self.class_prior < 1.0:
            raise ValueError(f"class_prior must be in (0, 1), got {self.class_prior}")


@dataclass(frozen=True)
class TrialRecord:
    """One decision event: truth, both predictions, both confidences."""

    y: int
    yhat_h: int
    yhat_m: int
    conf_h: float
    conf_m: float

    def __post_init__(self):
        for name in ("y", "yhat_h", "yhat_m"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")
        for name in ("conf_h", "conf_m"):
            c = getattr(self, name)
            if not (math.isfinite(c) and 0.0 <= c <= 1.0):
                raise ValueError(f"{name} must be finite in [0, 1], got {c}")


@dataclass
class TrialData:
    """Columnar batch of trials; behaves as a sequence of TrialRecord."""

    y: np.ndarray
    yhat_h: np.ndarray
    yhat_m: np.ndarray
    conf_h: np.ndarray
    conf_m: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        for name in ("yhat_h", "yhat_m", "conf_h", "conf_m"):
            if len(getattr(self, name)) != n:
                raise ValueError("all columns must share one length")

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TrialData(self.y[i], self.yhat_h[i], self.yhat_m[i],
                             self.conf_h[i], self.conf_m[i])
        return TrialRecord(int(self.y[i]), int(self.yhat_h[i]), int(self.yhat_m[i]),
                           float(self.conf_h[i]), float(self.conf_m[i]))

    @classmethod
    def from_records(cls, records) -> "TrialData":
        recs = list(records)
        return cls(
            y=np.array([r.y for r in recs], dtype=np.int8),
            yhat_h=np.array([r.yhat_h for r in recs], dtype=np.int8),
            yhat_m=np.array([r.yhat_m for r in recs], dtype=np.int8),
            conf_h=np.array([r.conf_h for r in recs], dtype=np.float64),
            conf_m=np.array([r.conf_m for r in recs], dtype=np.float64),
        )

    @property
    def accuracy_h(self) -> float:
        return float(np.mean(self.yhat_h == self.y))

    @property
    def accuracy_m(self) -> float:
        return float(np.mean(self.yhat_m == self.y))

    def empirical_error_correlation(self) -> float:
        e_h = (self.yhat_h != self.y).astype(np.float64)
        e_m = (self.yhat_m != self.y).astype(np.float64)
        sd = e_h.std() * e_m.std()
        if sd == 0.0:
            raise DegenerateAgentError("an agent never errs (or always errs) in this sample")
        return float(np.mean(e_h * e_m) - e_h.mean() * e_m.mean()) / sd


def metacog_sensitivity(p: AgentParams) -> float:
    """Standardized evidence separation (mu1 - mu0) / sigma."""
    return (p.mu1 - p.mu0) / p.sigma


def implied_accuracy(p: AgentParams, class_prior: float = 0.5) -> float:
    """Accuracy of the threshold rule yhat = 1[theta > tau]."""
    if not 0.0 < class_prior < 1.0:
        raise ValueError("class_prior must be in (0, 1)")
    hit = ndtr((p.mu1 - p.tau) / p.sigma)
    rej = ndtr((p.tau - p.mu0) / p.sigma)
    return float(class_prior * hit + (1.0 - class_prior) * rej)


def confidence_of(theta, p: AgentParams):
    """Confidence toward class 1: Phi((theta - tau) / sigma)."""
    return ndtr((np.asarray(theta, dtype=np.float64) - p.tau) / p.sigma)


def _error_thresholds(p: AgentParams) -> tuple[float, float]:
    # Standardized points: error given Y=1 is z <= z1; given Y=0 is z > z0.
    z1 = (p.tau - p.mu1) / p.sigma
    z0 = (p.tau - p.mu0) / p.sigma
    return z1, z0


def marginal_error_rates(cfg: PairConfig) -> tuple[float, float]:
    return (1.0 - implied_accuracy(cfg.agent_h, cfg.class_prior),
            1.0 - implied_accuracy(cfg.agent_m, cfg.class_prior))


def joint_error_prob(cfg: PairConfig, latent_corr: float | None = None) -> float:
    """P(both agents err) from the latent model via orthant probabilities."""
    r = cfg.latent_corr if latent_corr is None else latent_corr
    h1, h0 = _error_thresholds(cfg.agent_h)
    m1, m0 = _error_thresholds(cfg.agent_m)
    p = cfg.class_prior
    both_e1 = bvn_cdf(h1, m1, r)        # both below threshold when Y=1
    both_e0 = bvn_upper(h0, m0, r)      # both above threshold when Y=0
    return float(p * both_e1 + (1.0 - p) * both_e0)


def joint_error_from_correlation(e_h: float, e_m: float, rho: float) -> float:
    """Reconstruct P(both err) from marginals and error correlation."""
    return e_h * e_m + rho * math.sqrt(e_h * (1 - e_h) * e_m * (1 - e_m))


def error_correlation(cfg: PairConfig, latent_corr: float | None = None) -> float:
    """Pearson correlation of the two error indicators, analytically."""
    e_h, e_m = marginal_error_rates(cfg)
    for e in (e_h, e_m):
        if e < _EPS_PROB or e > 1.0 - _EPS_PROB:
            raise DegenerateAgentError(
                f"marginal error rate {e:.3g} leaves the correlation undefined"
            )
    joint = joint_error_prob(cfg, latent_corr=latent_corr)
    denom = math.sqrt(e_h * (1 - e_h) * e_m * (1 - e_m))
    rho = (joint - e_h * e_m) / denom
    return float(min(1.0, max(-1.0, rho)))


def error_correlation_bounds(e_h: float, e_m: float) -> tuple[float, float]:
    """Frechet bounds on the correlation of two Bernoulli error indicators."""
    denom = math.sqrt(e_h * (1 - e_h) * e_m * (1 - e_m))
    if denom == 0.0:
        raise DegenerateAgentError("degenerate marginal error rate")
    joint_max = min(e_h, e_m)
    joint_min = max(0.0, e_h + e_m - 1.0)
    return ((joint_min - e_h * e_m) / denom, (joint_max - e_h * e_m) / denom)


_R_CAP = 1.0 - 1e-9  # latent correlations are searched inside +/- this cap


def achievable_error_correlation(h: AgentParams, m: AgentParams,
                                 class_prior: float = 0.5) -> tuple[float, float]:
    """Error-correlation interval reachable through the latent model."""
    cfg = PairConfig(h, m, 0.0, class_prior)
    return (error_correlation(cfg, latent_corr=-_R_CAP),
            error_correlation(cfg, latent_corr=_R_CAP))


def calibrate_latent_correlation(target_rho: float, h: AgentParams, m: AgentParams,
                                 class_prior: float = 0.5, tol: float = 1e-6) -> float:
    """Latent correlation whose derived error correlation matches target_rho.

    Monotone bisection; raises InfeasibleCorrelationError (reporting the
    achievable interval) when the target cannot be reached.
    """
    cfg = PairConfig(h, m, 0.0, class_prior)
    lo_rho, hi_rho = achievable_error_correlation(h, m, class_prior)
    if not lo_rho - tol <= target_rho <= hi_rho + tol:
        raise InfeasibleCorrelationError(target_rho, lo_rho, hi_rho)

    def f(r: float) -> float:
        return error_correlation(cfg, latent_corr=r) - target_rho

    f0 = f(0.0)
    if abs(f0) <= tol * 1e-3:
        return 0.0
    lo, hi = (-_R_CAP, 0.0) if f0 > 0 else (0.0, _R_CAP)
    root = brentq(f, lo, hi, xtol=1e-12, rtol=8.9e-16)
    return float(root)


_CHUNK = 1 << 16


def _chunk_generator(seed: int, chunk_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chunk_index,))
    return np.random.Generator(np.random.Philox(ss))


def simulate_trials(cfg: PairConfig, n: int, seed: int) -> TrialData:
    """Simulate n trials; bit-identical for identical (cfg, n, seed).

    Trials are generated in fixed-size chunks, each from its own
    counter-based stream keyed by (seed, chunk index), so the output is
    independent of how chunks might be scheduled.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    r = cfg.latent_corr
    root = math.sqrt(1.0 - r * r)
    ah, am = cfg.agent_h, cfg.agent_m

    y = np.empty(n, dtype=np.int8)
    yhat_h = np.empty(n, dtype=np.int8)
    yhat_m = np.empty(n, dtype=np.int8)
    conf_h = np.empty(n, dtype=np.float64)
    conf_m = np.empty(n, dtype=np.float64)

    for ci in range(0, (n + _CHUNK - 1) // _CHUNK):
        lo = ci * _CHUNK
        hi = min(lo + _CHUNK, n)
        m = hi - lo
        gen = _chunk_generator(seed, ci)
        u = gen.random((3, m))
        yc = u[0] < cfg.class_prior
        z_h = ndtri(u[1])
        z_m = r * z_h + root * ndtri(u[2])
        th = np.where(yc, ah.mu1, ah.mu0) + ah.sigma * z_h
        tm = np.where(yc, am.mu1, am.mu0) + am.sigma * z_m
        y[lo:hi] = yc
        yhat_h[lo:hi] = th > ah.tau
        yhat_m[lo:hi] = tm > am.tau
        conf_h[lo:hi] = ndtr((th - ah.tau) / ah.sigma)
        conf_m[lo:hi] = ndtr((tm - am.tau) / am.sigma)

    return TrialData(y, yhat_h, yhat_m, conf_h, conf_m)


def midline_agent(d: float) -> AgentParams:
    """Canonical agent with threshold at the class midpoint (tau = 0)."""
    if d < 0:
        raise ValueError("sensitivity must be >= 0")
    return AgentParams(mu0=-d / 2.0, mu1=d / 2.0, sigma=1.0, tau=0.0)


def agent_from_accuracy(accuracy: float, d: float, class_prior: float = 0.5,
                        tau_sign: int = +1) -> AgentParams:
    """Canonical agent with sensitivity d and the given accuracy.

    Accuracy is controlled by sliding the threshold off the midline; the
    reachable range for fixed d is (max(prior, 1-prior), implied accuracy
    at tau=0].  ``tau_sign`` picks which side of the midline to use.
    """
    if d < 0:
        raise ValueError("sensitivity must be >= 0")
    base = AgentParams(mu0=-d / 2.0, mu1=d / 2.0, sigma=1.0, tau=0.0)
    floor = max(class_prior, 1.0 - class_prior)

    def acc(tau: float) -> float:
        return implied_accuracy(
            AgentParams(mu0=-d / 2.0, mu1=d / 2.0, sigma=1.0, tau=tau), class_prior
        )

    # accuracy is maximal at the prior-optimal threshold and decays toward
    # the majority-class rate as |tau| grows
    t_opt = 0.0 if class_prior == 0.5 else (
        math.log((1 - class_prior) / class_prior) / d if d > 0 else 0.0
    )
    a_max = acc(t_opt)
    if not floor < accuracy <= a_max + 1e-12:
        raise ValueError(
            f"accuracy {accuracy} unreachable for d={d}: range is ({floor:.4f}, {a_max:.4f}]"
        )
    if abs(accuracy - a_max) < 1e-12:
        return AgentParams(mu0=-d / 2.0, mu1=d / 2.0, sigma=1.0, tau=t_opt)
    span = 40.0
    if tau_sign >= 0:
        tau = brentq(lambda t: acc(t) - accuracy, t_opt, t_opt + span, xtol=1e-13)
    else:
        tau = brentq(lambda t: acc(t) - accuracy, t_opt - span, t_opt, xtol=1e-13)
    return AgentParams(mu0=-d / 2.0, mu1=d / 2.0, sigma=1.0, tau=float(tau))


def symmetric_pair(accuracy: float, d: float, latent_corr: float = 0.0,
                   class_prior: float = 0.5) -> PairConfig:
    """Identical-agent pair at the given accuracy and sensitivity."""
    agent = agent_from_accuracy(accuracy, d, class_prior)
    return PairConfig(agent, agent, latent_corr, class_prior)
