"""Deterministic federated-learning simulation for spiking networks on
event-frame data: backdoor attacks with update scaling and temporal trigger
splitting, an entropy-based input defense, and trigger stealth metrics."""

from . import attack, data, fl, snn, stealth, strip
from .attack import (
    AttackerRole,
    TriggerSpec,
    apply_trigger,
    evaluate_asr,
    frame_mask_for_bandit,
    full_frame_mask,
    local_malicious_update,
    poison_shard,
    scale_update,
)
from .data import (
    LabeledSample,
    PartitionConfig,
    generate_synthetic_dataset,
    partition,
    read_dataset,
    write_dataset,
)
from .errors import (
    AggregationError,
    ConfigurationError,
    EvaluationError,
    FederationError,
    FormatError,
    NumericError,
    SpikeFedError,
    TrainingError,
)
from .fl import FLConfig, RoundLog, aggregate, run_federation, select_devices
from .snn import (
    LIFConfig,
    ModelSpec,
    ParamVector,
    SurrogateConfig,
    TrainConfig,
    backward,
    evaluate_accuracy,
    forward,
    init_params,
    lif_step,
    load_checkpoint,
    reference_model,
    save_checkpoint,
    train_local,
)
from .stealth import StealthReport, mse_frames, ssim_frames, stealth_report
from .strip import (
    EntropyReport,
    StripConfig,
    classify,
    evaluate_defense,
    fit_boundary,
    normal_quantile,
    strip_entropy,
    superimpose,
)

__version__ = "0.1.0"
