"""Bilevel hyperparameter tuning toolkit.

A bilevel program with a linear upper level and a convex-quadratic lower
level is flattened into a single-level problem through its lower-level KKT
conditions; the complementarity conditions are encoded by one of five
interchangeable modes (SOS1 branching, indicator constraints, big-M
binaries, explicit products, or one aggregate strong-duality row, the last
two optionally binary-expanded into MIPs).  A bundled simplex/active-set/
branch-and-bound stack solves the result exactly at desk scale, and two
independent oracles (grid search and exhaustive complementarity-pattern
enumeration) certify it.  The flagship application is tuning the C and
ε hyperparameters of support vector regression by optimizing
out-of-sample loss directly.

Typical use::

    from bilevelkit import svr, Mode, solve_bilevel

    inst = svr.generate_instance(samples=10, features=2, seed=42)
    model = svr.build_bilevel(inst)
    result, info = solve_bilevel(model, Mode.sos1())
    print(result.objective)
"""

from .bench import (
    Backend,
    BenchConfig,
    BenchRecord,
    ConfigError,
    ModeSpec,
    OutputFormat,
    parse_config,
    render_table,
    run_benchmark,
)
from .fileformats import (
    FormatError,
    QuadraticUnsupportedError,
    export_model,
    read_lp,
    write_lp,
    write_mps,
)
from .kkt import (
    ComplementarityPair,
    KktResidual,
    KktSystem,
    build_kkt,
    kkt_residual,
    lower_dual_objective,
)
from .model import (
    AffineExpr,
    BilevelModel,
    Constraint,
    Diagnostic,
    DuplicateNameError,
    IndicatorConstraint,
    InvalidModelError,
    InvertedBoundsError,
    Level,
    LinearConstraint,
    ModelError,
    QuadExpr,
    QuadraticConstraint,
    Rel,
    Sense,
    SingleLevelModel,
    Sos1Set,
    UnknownVariableError,
    VariableInfo,
    VarId,
    affine,
    quad,
)
from .oracle import (
    BilevelInfeasibleError,
    GridSpec,
    LowerLevelError,
    LowerSolution,
    OracleError,
    OracleResult,
    PatternCapError,
    UnboundedPatternError,
    enumerate_patterns,
    grid_search,
    solve_lower,
)
from .pipeline import solve_bilevel
from .reformulate import (
    CLI_MODE_NAMES,
    ExpansionParams,
    Mode,
    ModeKind,
    ReformulationError,
    ReformulationInfo,
    binary_expand,
    expansion_hints,
    reformulate,
)
from .solver import (
    SolveOptions,
    SolveResult,
    SolveStatus,
    UnsupportedProblemError,
    check_bigm_tightness,
    compute_gap,
    solve_bnb,
    solve_convex,
)
from .svr import (
    InstanceError,
    SvrInstance,
    build_bilevel,
    generate_instance,
    instance_name,
    load_instance,
    n_in_sample,
    one_sample_instance,
    parse_instance_name,
    save_instance,
    upper_loss,
)

__version__ = "0.1.0"
