"""Workload generation, method sweeps, guarantee verification and studies."""

from .methods import MethodResult, MethodSpec, run_method
from .studies import (
    baseline_ablation,
    combination_check,
    default_populations,
    random_walk_mse,
    tightness_study,
)
from .sweep import TrialRecord, VerificationReport, emit_csv, read_csv, run_sweep, verify_guarantee
from .workloads import WorkloadSpec, gen_workload
