"""Blinded and unblinded LLM pricing experiments with a seeded causal simulator."""

from .analysis import (
    CovariateAudit,
    DemandCurve,
    ReferenceData,
    StageResult,
    covariate_audit,
    covariate_sweep,
    demand_curve,
    improvement_pct,
    load_reference,
    mae,
)
from .backends import DgpConfig, HttpBackend, MockBackend, ground_truth_demand
from .catalog import ProductEntry, load_catalog, price_grid, round_to_cents
from .finetune import emit_dataset, eval_matrix, make_folds, mix_observational
from .parsing import parse_decimal, parse_decision, parse_record
from .prompts import PromptStrategy, builtin_strategy, check_ambiguity, render
from .runner import ExperimentDesign, JsonlStore, generate_personas, run_experiment, run_persona_sweep

__version__ = "0.1.0"
