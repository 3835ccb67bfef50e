"""Non-local spatial propagation toolkit for sparse-to-dense depth completion.

The pieces, bottom up: immutable grid containers (grid), bilinear sampling
with derivatives (sampler), affinity normalization schemes and their
Monte Carlo analysis (norms), the iterated propagation operator
(propagation), hand-rolled reverse-mode gradients plus a finite-difference
verifier (backprop), a per-pixel toy optimizer (learner), synthetic scenes
and sampling protocols (scenes), evaluation metrics (metrics), and file
formats (mapio). The `nlprop` CLI drives end-to-end experiments.
"""

from .grid import (
    AffinityField,
    ConfidenceMap,
    Field2D,
    NeighborField,
    NormalizedAffinity,
    SparseDepth,
    Violation,
    make_field,
    validate,
)
from .sampler import (
    GatherPlan,
    SampleGrad,
    build_gather_plan,
    gather,
    gather_with_plan,
    sample,
    sample_grad,
)
from .norms import (
    ABS_SUM,
    ABS_SUM_STAR,
    TANH_C,
    TANH_GAMMA,
    NormScheme,
    SchemeConfigError,
    ZeroAffinitySum,
    abs_sum,
    abs_sum_star,
    apply_scheme,
    confidence_scale,
    mc_normalization_probability,
    normalize_batch,
    reference_weight,
    sample_normalized_pairs,
    stability_margin,
    tanh_c,
    tanh_gamma_abs_sum_star,
)
from .propagation import (
    CSPN_3X3,
    NON_LOCAL,
    SPN_THREE_WAY,
    NeighborMode,
    PropagationConfig,
    PropagationResult,
    neighbor_depth_variance,
    pattern_cspn,
    pattern_neighbor_field,
    pattern_spn,
    propagate,
    propagate_step,
)
from .backprop import (
    CheckInstance,
    GradCheckReport,
    GradientBundle,
    LossSpec,
    backward,
    forward_loss,
    gradcheck,
    loss,
)
from .learner import (
    AblationRow,
    FitConfig,
    FitDivergence,
    FitResult,
    ablation_grid,
    fit,
    init_depth_idw,
)
from .scenes import (
    SamplingSpec,
    SceneSpec,
    dilate_mask,
    discontinuity_mask,
    generate,
)
from .scenes import sample as sample_sparse
from .metrics import MetricReport, csv_header, csv_row, evaluate, evaluate_banded
from .mapio import (
    BadDimensions,
    BadMagic,
    MapFormatError,
    TruncatedPayload,
    read_depth_png16,
    read_field,
    read_map,
    write_depth_png16,
    write_map,
)

__version__ = "0.1.0"
