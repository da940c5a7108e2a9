"""Survival prognosis from EHR covariates and CT/PET volumes.

MTLR (linear and neural), Cox proportional hazards, a 3D-CNN Deep Fusion
model, risk ensembling, synthetic cohorts and a command line.
"""
from .core import (RiskScore, SurvivalCurve, SurvivalRecord, TimeGrid, concordance_index,
                   kaplan_meier, make_time_grid)
from .errors import (ConfigError, ConvergenceError, EvaluationError, InputError,
                     SurvFusionError, UndefinedCIndexError)

__version__ = "0.1.0"
