"""Counterfactual effect propagation analysis for multi-agent MDPs."""

from .effects import (
    EffectEstimate,
    EffectQuery,
    Outcome,
    estimate_ase,
    estimate_cf_ase,
    estimate_cf_pse,
    estimate_fpse,
    estimate_tcfe,
)
from .model import (
    ActionVar,
    InterventionSet,
    JointPolicy,
    MmdpScm,
    MmdpSpec,
    ModelError,
    Orderings,
    StateVar,
    Trajectory,
    ZeroProbabilityEvidence,
    build_scm,
    parse_var,
)

__all__ = [
    "ActionVar",
    "EffectEstimate",
    "EffectQuery",
    "InterventionSet",
    "JointPolicy",
    "MmdpScm",
    "MmdpSpec",
    "ModelError",
    "Orderings",
    "Outcome",
    "StateVar",
    "Trajectory",
    "ZeroProbabilityEvidence",
    "build_scm",
    "estimate_ase",
    "estimate_cf_ase",
    "estimate_cf_pse",
    "estimate_fpse",
    "estimate_tcfe",
    "parse_var",
]

__version__ = "0.1.0"
