"""hypofk: Feynman-Kac Monte Carlo solvers for degenerate diffusions, with
bracket-rank checking, martingale drift tests and analytic oracles."""

from .exprlang import (
    Expr,
    ExprDomainError,
    ExprError,
    ExprSyntaxError,
    diff,
    eval_expr,
    parse,
    parse_predicate,
    simplify,
    to_string,
)
from .fields import DiffusionSpec, VectorField, apply_G, apply_G_dual, make_U
from .hormander import BracketBasis, RankReport, generate_basis, lie_bracket, rank_at
from .paths import (
    CutoffSpec,
    PathConfig,
    PathSample,
    make_slowed_spec,
    simulate_path,
    simulate_paths,
    time_change,
)
from .estimators import (
    DensityEstimate,
    GridSpec,
    MCEstimate,
    ObservableSpec,
    h_transform_drift,
    solve_harmonic,
    solve_parabolic,
    survival_probability,
    transition_density,
)
from .verify import (
    DriftTestReport,
    GriddedField,
    ResidualReport,
    ks_two_sample,
    martingale_drift_test,
    oracle_interval_bm,
    strong_residual,
    weak_residual,
)
from .sle import SLEConfig, bpz_residual, covariant_observable, sle_spec

__version__ = "0.1.0"
