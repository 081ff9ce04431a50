"""Aggregation rules over two agents' predictions and confidences.

All rules are selection rules: when the agents agree they return the
shared label, and they only arbitrate disagreements.  Exact score ties are
broken by a fair coin drawn from a counter-based stream indexed by trial
position, so batch and single-trial application agree and results do not
depend on evaluation order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .sdt import PairConfig, TrialData, TrialRecord, metacog_sensitivity

__all__ = [
    "AggregationRule",
    "ConfidenceWeighted",
    "BayesAverage",
    "MajorityRandomTiebreak",
    "DeferTo",
    "BestIndividual",
    "EmptySampleError",
    "tie_coins",
    "apply_rule",
    "team_accuracy",
    "folded_confidence",
]

log = logging.getLogger(__name__)

CONF_CLIP = 1e-9  # confidence clipping bound before normal-quantile inversion


class EmptySampleError(ValueError):
    """Team accuracy requested on an empty trial sequence."""


def tie_coins(tie_seed: int, n: int) -> np.ndarray:
    """Fair coins for trial indices 0..n-1; True means 'pick H'."""
    gen = np.random.Generator(np.random.Philox(key=tie_seed))
    return gen.random(n) < 0.5


def folded_confidence(conf: np.ndarray) -> np.ndarray:
    """Confidence in the agent's own prediction: max(c, 1-c)."""
    conf = np.asarray(conf, dtype=np.float64)
    return np.maximum(conf, 1.0 - conf)


@dataclass(frozen=True)
class AggregationRule:
    """Base rule; subclasses arbitrate the disagreement trials."""

    name = "abstract"

    def _pick_h(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        """Boolean mask: on disagreements, take H's label (else M's)."""
        raise NotImplementedError

    def decide_batch(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        agree = trials.yhat_h == trials.yhat_m
        pick_h = self._pick_h(trials, coins)
        return np.where(agree | pick_h, trials.yhat_h, trials.yhat_m)


@dataclass(frozen=True)
class ConfidenceWeighted(AggregationRule):
    """Pick the agent with the larger weighted folded confidence.

    The decision is invariant under joint positive rescaling of the
    weights; only the argmax matters.
    """

    w_h: float = 1.0
    w_m: float = 1.0
    name = "cw"

    def __post_init__(self):
        if not (math.isfinite(self.w_h) and math.isfinite(self.w_m)):
            raise ValueError("weights must be finite")
        if self.w_h == 0.0 and self.w_m == 0.0:
            raise ValueError("weights must not both be zero")

    def _pick_h(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        s_h = self.w_h * folded_confidence(trials.conf_h)
        s_m = self.w_m * folded_confidence(trials.conf_m)
        return np.where(s_h == s_m, coins, s_h > s_m)

    @classmethod
    def from_sensitivities(cls, d_h: float, d_m: float, rho: float) -> "ConfidenceWeighted":
        from .bounds import optimal_weights

        w_h, w_m = optimal_weights(d_h, d_m, rho)
        return cls(w_h=w_h, w_m=w_m)


@dataclass(frozen=True)
class BayesAverage(AggregationRule):
    """Exact posterior argmax under a known (or fitted) pair model.

    Confidences are inverted back to latent evidence through the normal
    quantile function (clipped to [CONF_CLIP, 1-CONF_CLIP]); the posterior
    uses the joint bivariate Gaussian likelihood of both agents' evidence.
    """

    pair: PairConfig
    name = "bayes"

    def _pick_h(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        llr = self.log_posterior_odds(trials.conf_h, trials.conf_m)
        bayes_label = llr > 0
        tie = llr == 0.0
        # Follow H exactly when H's label matches the posterior argmax.
        pick_h = (trials.yhat_h == 1) == bayes_label
        return np.where(tie, coins, pick_h)

    def log_posterior_odds(self, conf_h, conf_m) -> np.ndarray:
        """log P(Y=1 | evidence) - log P(Y=0 | evidence)."""
        cfg = self.pair
        n_clipped = int(np.sum((np.asarray(conf_h) < CONF_CLIP) | (np.asarray(conf_h) > 1 - CONF_CLIP))
                        + np.sum((np.asarray(conf_m) < CONF_CLIP) | (np.asarray(conf_m) > 1 - CONF_CLIP)))
        if n_clipped:
            log.debug("clipped %d confidences to [%g, %g] before inversion",
                      n_clipped, CONF_CLIP, 1 - CONF_CLIP)
        ch = np.clip(np.asarray(conf_h, dtype=np.float64), CONF_CLIP, 1 - CONF_CLIP)
        cm = np.clip(np.asarray(conf_m, dtype=np.float64), CONF_CLIP, 1 - CONF_CLIP)
        ah, am = cfg.agent_h, cfg.agent_m
        th = ah.tau + ah.sigma * ndtri(ch)
        tm = am.tau + am.sigma * ndtri(cm)
        r = cfg.latent_corr
        q = 1.0 / (1.0 - r * r)

        def quad_form(u_h, u_m):
            return u_h * u_h - 2.0 * r * u_h * u_m + u_m * u_m

        u_h1 = (th - ah.mu1) / ah.sigma
        u_h0 = (th - ah.mu0) / ah.sigma
        u_m1 = (tm - am.mu1) / am.sigma
        u_m0 = (tm - am.mu0) / am.sigma
        llr = -0.5 * q * (quad_form(u_h1, u_m1) - quad_form(u_h0, u_m0))
        return llr + math.log(cfg.class_prior / (1.0 - cfg.class_prior))


@dataclass(frozen=True)
class MajorityRandomTiebreak(AggregationRule):
    """Majority vote; with two agents every disagreement is a coin flip."""

    name = "majority"

    def _pick_h(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        return coins


@dataclass(frozen=True)
class DeferTo(AggregationRule):
    """Always output one designated agent's prediction."""

    agent: str = "m"
    name = "defer"

    def __post_init__(self):
        if self.agent not in ("h", "m"):
            raise ValueError("agent must be 'h' or 'm'")

    def _pick_h(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        return np.full(len(trials), self.agent == "h")


@dataclass(frozen=True)
class BestIndividual(AggregationRule):
    """Defer to whichever agent is more accurate on the evaluated sample."""

    name = "best"

    def select(self, trials: TrialData) -> str:
        return "h" if trials.accuracy_h >= trials.accuracy_m else "m"

    def _pick_h(self, trials: TrialData, coins: np.ndarray) -> np.ndarray:
        return np.full(len(trials), self.select(trials) == "h")


def apply_rule(rule: AggregationRule, trial: TrialRecord, trial_index: int = 0,
               tie_seed: int = 0) -> int:
    """Single-trial surface; consistent with batch application at the
    same trial index and tie seed."""
    trials = TrialData.from_records([trial] * (trial_index + 1))
    coins = tie_coins(tie_seed, trial_index + 1)
    return int(rule.decide_batch(trials, coins)[trial_index])


def team_accuracy(rule: AggregationRule, trials: TrialData, tie_seed: int = 0) -> float:
    """Fraction of trials where the rule's output matches the truth."""
    if len(trials) == 0:
        raise EmptySampleError("cannot score an empty trial sequence")
    decisions = rule.decide_batch(trials, tie_coins(tie_seed, len(trials)))
    return float(np.mean(decisions == trials.y))
