"""flowcascade: tiered malware traffic classification over network flows."""

from .classify import MALICIOUS_LABEL, MALWARE_TYPES, MalwareTaxonomy, PhaseModel
from .dataset import DatasetSpec, FlowDataset, build_dataset
from .denoise import DenoisingAutoencoder, NoiseSpec, make_noisy, pad_to_fixed, train_denoiser
from .encoding import (
    BENIGN_LABEL,
    FEATURE_NAMES,
    N_FEATURES,
    Normalizer,
    WindowSample,
    encode_flow,
    fit_normalizer,
    window_encode,
)
from .meter import (
    FlowKey,
    FlowRecord,
    MeterConfig,
    assemble_flows,
    estimate_rtt,
    is_local_destination,
    payload_entropy,
)
from .metrics import ConfusionMatrix, Metrics, compute_metrics
from .nn import AdamaxState, DenseLayer, Network, TrainConfig, adamax_step, backward, grid_search, train
from .pcap import CaptureError, CaptureStats, PacketRecord, parse_capture
from .pipeline import (
    HostStream,
    PipelineVerdict,
    TierBundle,
    TierConfig,
    classify_window,
    per_host_split,
    run_all_tiers,
    slide_windows,
)
from .synth import SplitSpec, SyntheticProfile, Universe, default_universe, generate_flows
from .trainer import TierTrainSettings, train_tier_bundle

__version__ = "0.1.0"
