"""Echo state networks with sparse readouts for sequence-based place recognition."""

from .descriptors import (
    Dataset,
    DatasetManifest,
    DescriptorSet,
    HiddenLayer,
    embed,
    load_dataset,
    load_descriptors,
    load_manifest,
    save_dataset,
    save_manifest,
    synth_dataset,
    train_hidden,
    write_descriptors,
)
from .errors import ConfigError, DataFormatError
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    GridSpec,
    grid_search,
    holdout_generalization,
    load_config,
    rerank_top_k,
    run_experiment,
    start_point_sweep,
)
from .metrics import (
    EvalReport,
    PredictionRecord,
    accuracy,
    evaluate,
    is_match,
    pr_auc,
    recall_at_n,
)
from .presets import list_presets, load_preset
from .readout import (
    ReadoutModel,
    TrainConfig,
    forward,
    predict,
    sigmoid_ce_loss,
    softmax_ce_loss,
    train,
)
from .reservoir import (
    HierarchySpec,
    ReservoirMatrices,
    ReservoirSpec,
    build_hierarchy,
    build_reservoir,
    run_hierarchy_sequence,
    run_sequence,
    spectral_radius,
    step,
    step_hierarchy,
)
from .sparce import SparceLayer, calibrate, threshold_gradient

__version__ = "0.1.0"
