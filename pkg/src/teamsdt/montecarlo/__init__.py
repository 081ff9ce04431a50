"""Monte Carlo verification engine for the team-complementarity bounds."""

from .engine import (
    SweepSpec,
    CellResult,
    ThresholdEstimate,
    ThresholdNotBracketedError,
    RULE_NAMES,
    run_cell,
    run_sweep,
    estimate_threshold,
)
from .identities import DisagreementReport, verify_disagreement_identities
