"""Two-agent decision teams under signal detection theory.

Closed-form complementarity bounds, correlated-trial simulation, Monte
Carlo verification of the bounds, and maximum-likelihood recovery of the
model parameters from trial logs.
"""

from .sdt import (
    AgentParams,
    PairConfig,
    TrialRecord,
    TrialData,
    metacog_sensitivity,
    implied_accuracy,
    confidence_of,
    joint_error_prob,
    error_correlation,
    calibrate_latent_correlation,
    simulate_trials,
    agent_from_accuracy,
    midline_agent,
    symmetric_pair,
)

__version__ = "0.1.0"
