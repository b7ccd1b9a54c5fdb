"""Differentially private publication of geo-tagged electricity time series.

Builds a dense (x, y, t) consumption matrix from household smart-meter
readings and releases it under pure epsilon-DP, either through the
pattern-guided pipeline (hierarchical sanitized series -> sequence model ->
quantized partitions -> budgeted Laplace release) or one of the baseline
mechanisms (identity, Fourier-k, wavelet-k, Kalman).  A benchmark harness
scores mechanisms by mean relative error over range-query workloads.
"""

from .baselines import (
    fourier_perturb,
    haar_forward,
    haar_inverse,
    identity_sanitize,
    kalman_sanitize,
    wavelet_perturb,
)
from .bench import BenchConfig, BenchmarkReport, run_benchmark, run_mechanism
from .dp import (
    BudgetExhaustedError,
    BudgetLedger,
    allocate_budget,
    depth_sensitivity,
    identity_cell_sensitivity,
    laplace_mechanism,
    laplace_sample,
    make_rng,
    partition_sensitivity,
)
from .matrix import (
    ConsumptionMatrix,
    DegenerateQueryError,
    GridSpec,
    HouseholdDataset,
    HouseholdRecord,
    NormalizationParams,
    RangeQuery,
    answer_range_query,
    build_consumption_matrix,
    clip_readings,
    denormalize,
    mean_mre,
    minmax_normalize,
    mre,
)
from .pipeline import PatternPipelineConfig, PatternRunResult, pattern_sanitize
from .quadtree import (
    QuadLevel,
    RepresentativeSeries,
    TrainingSample,
    build_representative_series,
    quad_levels,
    sanitize_representatives,
    split_training_time,
    windowize,
)
from .rnn import (
    ModelConfig,
    ModelParams,
    forward,
    generate_pattern_matrix,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .sanitizer import PartitionSet, k_quantize, sanitize_partitions
from .synth import ConsumerModel, PlacementSpec, synth_households
from .workload import QueryWorkload, generate_queries

__version__ = "0.1.0"
