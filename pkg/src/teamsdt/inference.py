"""Maximum-likelihood recovery of the pair model from trial logs.

The joint likelihood of one trial inverts each confidence back to latent
evidence (theta = tau + Phi^-1(c), unit noise) and evaluates the
bivariate Gaussian density of the two evidence values given the truth,
times the class prior and the (parameter-free) change-of-variables
Jacobian.  Predictions are deterministic given evidence and threshold, so
records whose stored prediction contradicts 1[c > 1/2] are counted and
rejected as malformed.

Thresholds are parameterized on the confidence scale: tau_latent =
Phi^-1(t), the quantile position of the decision threshold relative to
the class-midpoint unit normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri
from scipy.stats import chi2

from .aggregation import CONF_CLIP
from .sdt import (
    AgentParams,
    DegenerateAgentError,
    InfeasibleCorrelationError,
    PairConfig,
    TrialData,
    calibrate_latent_correlation,
    error_correlation,
    simulate_trials,
)

__all__ = [
    "FitResult",
    "RecoveryReport",
    "ModelComparison",
    "fit_sdt",
    "recovery_study",
    "compare_models",
    "PARAM_NAMES",
    "PRIOR_BOX",
]

PARAM_NAMES = ("d_h", "d_m", "rho_latent", "tau_h", "tau_m")

# Optimization box; deliberately wider than the simulation prior box.
FIT_BOUNDS = ((0.0, 6.0), (0.0, 6.0), (-0.99, 0.99), (0.005, 0.995), (0.005, 0.995))

# Simulation priors for the recovery study (tau on the confidence scale,
# rho on the error-correlation scale).
PRIOR_BOX = {
    "d_h": (0.5, 2.5),
    "d_m": (0.5, 2.5),
    "rho_hm": (0.0, 0.9),
    "tau_h": (0.3, 0.7),
    "tau_m": (0.3, 0.7),
}

_BOUNDARY_TOL = 1e-4


@dataclass
class FitResult:
    estimates: dict
    rho_hm: float
    log_likelihood: float
    bic: float
    n: int
    n_params: int
    ci_95: dict
    rho_hm_ci: tuple
    convergence_status: str
    n_rejected: int
    se: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _extract(trials: TrialData):
    y = np.asarray(trials.y, dtype=np.float64)
    ch = np.clip(np.asarray(trials.conf_h, dtype=np.float64), CONF_CLIP, 1 - CONF_CLIP)
    cm = np.clip(np.asarray(trials.conf_m, dtype=np.float64), CONF_CLIP, 1 - CONF_CLIP)
    zh = ndtri(ch)
    zm = ndtri(cm)
    return y, zh, zm


def _consistency_mask(trials: TrialData) -> np.ndarray:
    ok_h = (np.asarray(trials.conf_h) > 0.5) == (np.asarray(trials.yhat_h) == 1)
    ok_h |= np.asarray(trials.conf_h) == 0.5
    ok_m = (np.asarray(trials.conf_m) > 0.5) == (np.asarray(trials.yhat_m) == 1)
    ok_m |= np.asarray(trials.conf_m) == 0.5
    return ok_h & ok_m


def _nll_and_grad(params: np.ndarray, y, zh, zm, log_prior_1, log_prior_0):
    """Negative joint log-likelihood and gradient, vectorized over trials.

    The parameter-free Jacobian of the confidence inversion is omitted
    here and added back as a constant by the caller.
    """
    d_h, d_m, rho, t_h, t_m = params
    tau_h = ndtri(t_h)
    tau_m = ndtri(t_m)
    sign = 2.0 * y - 1.0
    u_h = tau_h + zh - sign * d_h / 2.0
    u_m = tau_m + zm - sign * d_m / 2.0
    q = 1.0 / (1.0 - rho * rho)
    s = u_h * u_h - 2.0 * rho * u_h * u_m + u_m * u_m
    n = len(y)
    ll = (-n * math.log(2.0 * math.pi) - 0.5 * n * math.log(1.0 - rho * rho)
          - 0.5 * q * float(np.sum(s))
          + float(np.sum(np.where(y == 1.0, log_prior_1, log_prior_0))))
    # dll/du terms
    g_uh = -q * (u_h - rho * u_m)
    g_um = -q * (u_m - rho * u_h)
    g_dh = float(np.sum(g_uh * (-sign / 2.0)))
    g_dm = float(np.sum(g_um * (-sign / 2.0)))
    g_rho = float(n * rho * q - rho * q * q * np.sum(s) + q * np.sum(u_h * u_m))
    # dtau/dt = 1/phi(ndtri(t))
    phi_h = math.exp(-0.5 * tau_h * tau_h) / math.sqrt(2.0 * math.pi)
    phi_m = math.exp(-0.5 * tau_m * tau_m) / math.sqrt(2.0 * math.pi)
    g_th = float(np.sum(g_uh)) / phi_h
    g_tm = float(np.sum(g_um)) / phi_m
    return -ll, -np.array([g_dh, g_dm, g_rho, g_th, g_tm])


def _log_jacobian(trials: TrialData) -> float:
    _, zh, zm = _extract(trials)
    return float(np.sum(0.5 * zh * zh + 0.5 * zm * zm) + len(zh) * math.log(2.0 * math.pi))


def _start_points(n_starts: int) -> np.ndarray:
    """Deterministic lattice of starts over the prior box."""
    from scipy.stats import qmc

    eng = qmc.Sobol(d=5, scramble=False)
    u = eng.random(n_starts)
    lo = np.array([0.6, 0.6, -0.5, 0.25, 0.25])
    hi = np.array([2.4, 2.4, 0.9, 0.75, 0.75])
    return lo + u * (hi - lo)


def pair_from_estimates(est: dict, class_prior: float = 0.5) -> PairConfig:
    agent_h = AgentParams(mu0=-est["d_h"] / 2, mu1=est["d_h"] / 2, sigma=1.0,
                          tau=float(ndtri(est["tau_h"])))
    agent_m = AgentParams(mu0=-est["d_m"] / 2, mu1=est["d_m"] / 2, sigma=1.0,
                          tau=float(ndtri(est["tau_m"])))
    return PairConfig(agent_h, agent_m, est["rho_latent"], class_prior)


def loglik_per_trial(est: dict, trials: TrialData, class_prior: float = 0.5) -> np.ndarray:
    """Per-trial joint log density of (y, conf_h, conf_m); includes Jacobian."""
    y, zh, zm = _extract(trials)
    d_h, d_m, rho = est["d_h"], est["d_m"], est["rho_latent"]
    tau_h, tau_m = float(ndtri(est["tau_h"])), float(ndtri(est["tau_m"]))
    sign = 2.0 * y - 1.0
    u_h = tau_h + zh - sign * d_h / 2.0
    u_m = tau_m + zm - sign * d_m / 2.0
    q = 1.0 / (1.0 - rho * rho)
    s = u_h * u_h - 2.0 * rho * u_h * u_m + u_m * u_m
    log_bvn = -math.log(2.0 * math.pi) - 0.5 * math.log(1.0 - rho * rho) - 0.5 * q * s
    log_prior = np.where(y == 1.0, math.log(class_prior), math.log(1.0 - class_prior))
    jac = 0.5 * zh * zh + 0.5 * zm * zm + math.log(2.0 * math.pi)
    return log_bvn + log_prior + jac


def fit_sdt(trials: TrialData, class_prior: float = 0.5, n_starts: int = 8,
            bootstrap_ci: int = 0, _bootstrap_seed: int = 0) -> FitResult:
    """Fit (d_H, d_M, rho_latent, tau_H, tau_M) by joint maximum likelihood.

    Multi-start local optimization with analytic gradients; confidence
    intervals from the observed-information Hessian by default, or a
    parametric bootstrap when ``bootstrap_ci`` (the replicate count) is
    positive.
    """
    if len(trials) < 100:
        raise ValueError(f"need at least 100 trials, got {len(trials)}")
    mask = _consistency_mask(trials)
    n_rejected = int(len(trials) - mask.sum())
    if n_rejected:
        trials = trials[np.nonzero(mask)[0]]
    if len(trials) < 100:
        raise ValueError("fewer than 100 consistent trials after rejection")
    correct_h = trials.yhat_h == trials.y
    correct_m = trials.yhat_m == trials.y
    boundary_data = False
    for corr in (correct_h, correct_m):
        if corr.all() or (~corr).all():
            boundary_data = True

    y, zh, zm = _extract(trials)
    lp1, lp0 = math.log(class_prior), math.log(1.0 - class_prior)
    args = (y, zh, zm, lp1, lp0)

    best = None
    for x0 in _start_points(n_starts):
        res = minimize(_nll_and_grad, x0, args=args, jac=True, method="L-BFGS-B",
                       bounds=FIT_BOUNDS, options={"ftol": 1e-12, "gtol": 1e-9,
                                                   "maxiter": 500})
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    n = len(trials)
    ll = -best.fun + _log_jacobian(trials)
    est = dict(zip(PARAM_NAMES, (float(v) for v in x)))

    status = "converged" if best.success else "max_iter"
    for v, (lo, hi) in zip(x, FIT_BOUNDS):
        if v - lo < _BOUNDARY_TOL or hi - v < _BOUNDARY_TOL:
            status = "boundary"
    if boundary_data and status == "converged":
        status = "boundary"

    if bootstrap_ci > 0:
        se, ci = _bootstrap_cis(est, n, class_prior, bootstrap_ci, _bootstrap_seed)
    else:
        se, ci = _hessian_cis(x, args)

    cfg = pair_from_estimates(est, class_prior)
    try:
        rho_hm = error_correlation(cfg)
        r_se = se["rho_latent"]
        lo_r = max(-0.999, est["rho_latent"] - 1.96 * r_se)
        hi_r = min(0.999, est["rho_latent"] + 1.96 * r_se)
        rho_hm_ci = (error_correlation(cfg, latent_corr=lo_r),
                     error_correlation(cfg, latent_corr=hi_r))
    except DegenerateAgentError:
        rho_hm = float("nan")
        rho_hm_ci = (float("nan"), float("nan"))

    p = len(PARAM_NAMES)
    return FitResult(
        estimates=est,
        rho_hm=rho_hm,
        log_likelihood=ll,
        bic=-2.0 * ll + p * math.log(n),
        n=n,
        n_params=p,
        ci_95=ci,
        rho_hm_ci=rho_hm_ci,
        convergence_status=status,
        n_rejected=n_rejected,
        se=se,
    )


def _hessian_cis(x: np.ndarray, args) -> tuple[dict, dict]:
    """Observed-information CIs via central differences of the gradient."""
    k = len(x)
    hess = np.zeros((k, k))
    steps = np.maximum(1e-5, 1e-4 * np.abs(x))
    for j in range(k):
        xp = x.copy(); xp[j] += steps[j]
        xm = x.copy(); xm[j] -= steps[j]
        _, gp = _nll_and_grad(xp, *args)
        _, gm = _nll_and_grad(xm, *args)
        hess[:, j] = (gp - gm) / (2.0 * steps[j])
    hess = 0.5 * (hess + hess.T)
    try:
        cov = np.linalg.inv(hess)
        var = np.clip(np.diag(cov), 0.0, None)
    except np.linalg.LinAlgError:
        var = np.full(k, np.nan)
        cov = None
    se = {name: float(math.sqrt(v)) if v == v else float("nan")
          for name, v in zip(PARAM_NAMES, var)}
    ci = {name: (float(xi - 1.96 * se[name]), float(xi + 1.96 * se[name]))
          for name, xi in zip(PARAM_NAMES, x)}
    return se, ci


def _bootstrap_cis(est: dict, n: int, class_prior: float, n_boot: int,
                   seed: int) -> tuple[dict, dict]:
    """Parametric bootstrap: refit on data simulated at the estimates."""
    cfg = pair_from_estimates(est, class_prior)
    draws = {name: [] for name in PARAM_NAMES}
    for b in range(n_boot):
        s = int(np.random.SeedSequence(entropy=(seed, b)).generate_state(1)[0])
        td = simulate_trials(cfg, n, s)
        try:
            fr = fit_sdt(td, class_prior, n_starts=2)
        except ValueError:
            continue
        for name in PARAM_NAMES:
            draws[name].append(fr.estimates[name])
    se, ci = {}, {}
    for name in PARAM_NAMES:
        arr = np.asarray(draws[name])
        se[name] = float(arr.std(ddof=1)) if len(arr) > 1 else float("nan")
        if len(arr) > 10:
            lo, hi = np.percentile(arr, [2.5, 97.5])
            ci[name] = (float(lo), float(hi))
        else:
            ci[name] = (float("nan"), float("nan"))
    return se, ci


@dataclass
class RecoveryReport:
    n_pairs: int
    trials_per_pair: int
    n_failed: int
    bias: dict
    sd: dict
    coverage: dict
    joint_coverage: float
    ci_method: str

    def to_dict(self) -> dict:
        return asdict(self)


_REPORT_ROWS = ("d_h", "d_m", "rho_hm", "tau_h", "tau_m")


def _draw_pair(rng: np.random.Generator) -> dict:
    box = PRIOR_BOX
    return {
        "d_h": rng.uniform(*box["d_h"]),
        "d_m": rng.uniform(*box["d_m"]),
        "rho_hm": rng.uniform(*box["rho_hm"]),
        "tau_h": rng.uniform(*box["tau_h"]),
        "tau_m": rng.uniform(*box["tau_m"]),
    }


def recovery_study(n_pairs: int, trials_per_pair: int, seed: int,
                   ci_method: str = "hessian") -> RecoveryReport:
    """Simulate pairs from the priors, refit, and score bias/SD/coverage.

    Pairs whose target error correlation is infeasible for the drawn
    agents, or whose fit fails, are recorded and excluded.
    """
    if n_pairs < 100:
        raise ValueError("need at least 100 pairs")
    if ci_method not in ("hessian", "bootstrap"):
        raise ValueError("ci_method must be 'hessian' or 'bootstrap'")
    errors = {name: [] for name in _REPORT_ROWS}
    covered = {name: [] for name in _REPORT_ROWS}
    joint_cov = []
    n_failed = 0
    for i in range(n_pairs):
        ss = np.random.SeedSequence(entropy=(seed, i))
        rng = np.random.Generator(np.random.Philox(ss))
        truth = _draw_pair(rng)
        agent_h = AgentParams(-truth["d_h"] / 2, truth["d_h"] / 2, 1.0,
                              float(ndtri(truth["tau_h"])))
        agent_m = AgentParams(-truth["d_m"] / 2, truth["d_m"] / 2, 1.0,
                              float(ndtri(truth["tau_m"])))
        try:
            r = calibrate_latent_correlation(truth["rho_hm"], agent_h, agent_m)
        except (InfeasibleCorrelationError, DegenerateAgentError):
            n_failed += 1
            continue
        cfg = PairConfig(agent_h, agent_m, r)
        sim_seed = int(ss.generate_state(2)[1])
        td = simulate_trials(cfg, trials_per_pair, sim_seed)
        try:
            fr = fit_sdt(td, bootstrap_ci=200 if ci_method == "bootstrap" else 0,
                         _bootstrap_seed=sim_seed)
        except (ValueError, DegenerateAgentError):
            n_failed += 1
            continue
        truth_fit_space = np.array([truth["d_h"], truth["d_m"], r,
                                    truth["tau_h"], truth["tau_m"]])
        est_vec = np.array([fr.estimates[p] for p in PARAM_NAMES])
        for name in _REPORT_ROWS:
            if name == "rho_hm":
                err = fr.rho_hm - truth["rho_hm"]
                lo, hi = fr.rho_hm_ci
                cov = lo - 1e-12 <= truth["rho_hm"] <= hi + 1e-12
            else:
                err = fr.estimates[name] - truth[name]
                lo, hi = fr.ci_95[name]
                cov = lo - 1e-12 <= truth[name] <= hi + 1e-12
            errors[name].append(err)
            covered[name].append(bool(cov))
        ses = np.array([fr.se[p] for p in PARAM_NAMES])
        if np.all(np.isfinite(ses)) and np.all(ses > 0):
            z = (est_vec - truth_fit_space) / ses
            joint_cov.append(bool(np.sum(z * z) <= chi2.ppf(0.95, df=5)))
        else:
            joint_cov.append(False)
    return RecoveryReport(
        n_pairs=n_pairs,
        trials_per_pair=trials_per_pair,
        n_failed=n_failed,
        bias={k: float(np.mean(v)) for k, v in errors.items()},
        sd={k: float(np.std(v, ddof=1)) for k, v in errors.items()},
        coverage={k: float(np.mean(v)) for k, v in covered.items()},
        joint_coverage=float(np.mean(joint_cov)),
        ci_method=ci_method,
    )


@dataclass
class ModelComparison:
    models: dict  # name -> {log_likelihood, n_params, bic, delta_bic, skipped, reason}
    n: int
    best: str

    def to_dict(self) -> dict:
        return asdict(self)


def _conditional_ll_sdt(fr: FitResult, trials: TrialData, class_prior: float) -> float:
    """Log-likelihood of the correctness outcomes given both confidences."""
    from .aggregation import BayesAverage

    cfg = pair_from_estimates(fr.estimates, class_prior)
    odds = BayesAverage(cfg).log_posterior_odds(trials.conf_h, trials.conf_m)
    p1 = 1.0 / (1.0 + np.exp(-odds))
    p1 = np.clip(p1, 1e-12, 1 - 1e-12)
    y = np.asarray(trials.y, dtype=np.float64)
    return float(np.sum(np.where(y == 1.0, np.log(p1), np.log(1.0 - p1))))


def _bernoulli_ll(p: np.ndarray, outcome: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(np.sum(np.where(outcome, np.log(p), np.log(1.0 - p))))


def _fit_logistic(x: np.ndarray, yb: np.ndarray, iters: int = 60) -> tuple[float, float]:
    """Two-parameter logistic regression by Newton iterations."""
    b0, b1 = 0.0, 0.0
    X = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    for _ in range(iters):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(mu * (1.0 - mu), 1e-10, None)
        grad = X.T @ (yb - mu)
        hess = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return float(beta[0]), float(beta[1])


def compare_models(trials: TrialData, class_prior: float = 0.5) -> ModelComparison:
    """BIC comparison of the pair model against confidence baselines.

    All models are scored on the same observable: the per-trial
    correctness outcome of both agents given their confidences.  The pair
    model couples the two agents through the joint evidence posterior;
    the baselines treat them as independent Bernoulli outcomes.
    """
    if len(trials) < 500:
        raise ValueError(f"need at least 500 trials, got {len(trials)}")
    n = len(trials)
    fold_h = np.maximum(trials.conf_h, 1 - trials.conf_h)
    fold_m = np.maximum(trials.conf_m, 1 - trials.conf_m)
    corr_h = (trials.yhat_h == trials.y)
    corr_m = (trials.yhat_m == trials.y)
    models: dict = {}

    fr = fit_sdt(trials, class_prior)
    ll_sdt = _conditional_ll_sdt(fr, trials, class_prior)
    models["sdt"] = {"log_likelihood": ll_sdt, "n_params": 5}

    degenerate = np.std(fold_h) < 1e-9 or np.std(fold_m) < 1e-9
    if degenerate:
        reason = "constant confidence: slope unidentifiable"
        models["linear"] = {"skipped": True, "reason": reason}
        models["logistic"] = {"skipped": True, "reason": reason}
    else:
        ll_lin = 0.0
        for fold, corr in ((fold_h, corr_h), (fold_m, corr_m)):
            coef = np.polyfit(fold, corr.astype(float), 1)
            p = np.polyval(coef, fold)
            ll_lin += _bernoulli_ll(p, corr)
        models["linear"] = {"log_likelihood": ll_lin, "n_params": 4}

        ll_log = 0.0
        for fold, corr in ((fold_h, corr_h), (fold_m, corr_m)):
            b0, b1 = _fit_logistic(fold, corr.astype(float))
            p = 1.0 / (1.0 + np.exp(-(b0 + b1 * fold)))
            ll_log += _bernoulli_ll(p, corr)
        models["logistic"] = {"log_likelihood": ll_log, "n_params": 4}

    ll_acc = (_bernoulli_ll(np.full(n, corr_h.mean()), corr_h)
              + _bernoulli_ll(np.full(n, corr_m.mean()), corr_m))
    models["accuracy_only"] = {"log_likelihood": ll_acc, "n_params": 2}

    for name, info in models.items():
        if info.get("skipped"):
            info.setdefault("bic", float("nan"))
            continue
        info["bic"] = -2.0 * info["log_likelihood"] + info["n_params"] * math.log(n)
    live = {k: v for k, v in models.items() if not v.get("skipped")}
    best = min(live, key=lambda k: live[k]["bic"])
    for name, info in models.items():
        if not info.get("skipped"):
            info["delta_bic"] = info["bic"] - live[best]["bic"]
    return ModelComparison(models=models, n=n, best=best)
