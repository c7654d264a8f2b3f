"""Four-tier pipeline: per-host streams, sliding windows, cascade verdicts.

Each tier is a full pipeline replica at its own window size M. A window slot
holds up to M*(1+r_max) raw flows (M malicious plus interleaved benign noise
by design); windows start at every stride offset and are kept when at least
M flows remain. Tiers never exchange information.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .classify import MALICIOUS_LABEL, PhaseModel, predict_binary, predict_family, predict_multiclass
from .denoise import DenoisingAutoencoder, pad_to_fixed
from .encoding import Normalizer

TIER_WINDOW_SIZES = (10, 20, 30, 40)


@dataclass
class TierConfig:
    tier_index: int
    window_size: int
    stride: int | None = None  # default: window_size (non-overlapping)
    r_max_binary: float = 8.0
    r_max_multiclass: float = 2.0

    def __post_init__(self):
        if not 1 <= self.tier_index <= 4:
            raise ValueError("tier_index must be 1..4")
        if self.window_size != TIER_WINDOW_SIZES[self.tier_index - 1]:
            raise ValueError(
                f"tier {self.tier_index} uses window size "
                f"{TIER_WINDOW_SIZES[self.tier_index - 1]}, got {self.window_size}"
            )
        if self.stride is None:
            self.stride = self.window_size
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def capacity(self) -> int:
        return self.window_size + int(round(self.r_max_binary * self.window_size))

    @classmethod
    def for_tier(cls, tier_index: int, stride=None) -> "TierConfig":
        return cls(tier_index=tier_index, window_size=TIER_WINDOW_SIZES[tier_index - 1], stride=stride)


@dataclass
class TierBundle:
    """Trained models for one tier. Type/family models may be absent when a
    bundle was trained for binary-only experiments."""

    config: TierConfig
    normalizer: Normalizer
    denoiser: DenoisingAutoencoder
    binary: PhaseModel
    type_model: PhaseModel | None = None
    family_models: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tier_index": self.config.tier_index,
            "window_size": self.config.window_size,
            "stride": self.config.stride,
            "r_max_binary": self.config.r_max_binary,
            "r_max_multiclass": self.config.r_max_multiclass,
            "normalizer": self.normalizer.to_dict(),
            "denoiser": self.denoiser.to_dict(),
            "binary": self.binary.to_dict(),
            "type": self.type_model.to_dict() if self.type_model else None,
            "families": {t: m.to_dict() for t, m in self.family_models.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TierBundle":
        config = TierConfig(
            tier_index=doc["tier_index"],
            window_size=doc["window_size"],
            stride=doc["stride"],
            r_max_binary=doc["r_max_binary"],
            r_max_multiclass=doc["r_max_multiclass"],
        )
        return cls(
            config=config,
            normalizer=Normalizer.from_dict(doc["normalizer"]),
            denoiser=DenoisingAutoencoder.from_dict(doc["denoiser"]),
            binary=PhaseModel.from_dict(doc["binary"]),
            type_model=PhaseModel.from_dict(doc["type"]) if doc.get("type") else None,
            family_models={t: PhaseModel.from_dict(m) for t, m in doc.get("families", {}).items()},
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TierBundle":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class HostStream:
    host: str
    flows: list  # time-ordered, host is the initiator


@dataclass
class PipelineVerdict:
    tier_index: int
    host: str
    window_start: int
    window_end: int  # exclusive
    binary: str
    score: float
    mal_type: str | None = None
    type_probs: dict | None = None
    family: str | None = None
    family_probs: dict | None = None

    def to_dict(self) -> dict:
        doc = {
            "tier": self.tier_index,
            "host": self.host,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "binary": self.binary,
            "score": self.score,
        }
        if self.binary == MALICIOUS_LABEL:
            doc["type"] = self.mal_type
            doc["type_probs"] = self.type_probs
            doc["family"] = self.family
            doc["family_probs"] = self.family_probs
        return doc


def per_host_split(flows) -> dict:
    """Partition time-ordered flows by initiator address (stable order)."""
    streams: dict[str, HostStream] = {}
    for f in flows:
        if f.key is None:
            raise ValueError("per-host split needs flows with keys")
        host = f.key.initiator_ip
        if host not in streams:
            streams[host] = HostStream(host=host, flows=[])
        streams[host].flows.append(f)
    return streams


def slide_windows(stream: HostStream, tier: TierConfig) -> list:
    """(start, end) spans at every stride offset; a span is kept when at
    least window_size flows remain, and runs to at most `capacity` flows."""
    n = len(stream.flows)
    spans = []
    for start in range(0, n, tier.stride):
        end = min(start + tier.capacity, n)
        if end - start >= tier.window_size:
            spans.append((start, end))
    return spans


def classify_window(window_flows, bundle: TierBundle, host="", span=(0, 0)) -> PipelineVerdict:
    """Run one window through encode -> binary -> (type -> family)."""
    if bundle.binary is None:
        raise ValueError("bundle is missing the binary phase")
    latent = bundle.denoiser.encode_flows(window_flows, bundle.normalizer)
    label, score = predict_binary(bundle.binary, latent)
    verdict = PipelineVerdict(
        tier_index=bundle.config.tier_index,
        host=host,
        window_start=span[0],
        window_end=span[1],
        binary=label,
        score=float(score),
    )
    if label == MALICIOUS_LABEL:
        if bundle.type_model is None or not bundle.family_models:
            raise ValueError("bundle is missing type/family phases for the cascade")
        mal_type, tprobs = predict_multiclass(bundle.type_model, latent)
        family, fprobs = predict_family(bundle.family_models, mal_type, latent)
        verdict.mal_type = mal_type
        verdict.type_probs = {
            c: float(p) for c, p in zip(bundle.type_model.class_names, tprobs)
        }
        verdict.family = family
        verdict.family_probs = {
            c: float(p)
            for c, p in zip(bundle.family_models[mal_type].class_names, fprobs)
        }
    return verdict


def run_all_tiers(streams, bundles) -> list:
    """Every tier over every stream, independently; verdicts carry their
    (tier, host, window_start) identity rather than a global order."""
    verdicts = []
    for bundle in bundles:
        for host in streams:
            stream = streams[host]
            for span in slide_windows(stream, bundle.config):
                window = stream.flows[span[0] : span[1]]
                verdicts.append(classify_window(window, bundle, host=host, span=span))
    return verdicts


def encode_samples(bundle: TierBundle, samples) -> np.ndarray:
    """Latent matrix for a list of WindowSamples (batched encoder forward)."""
    padded = np.zeros((len(samples), bundle.denoiser.padded_len * 11))
    for i, s in enumerate(samples):
        padded[i] = pad_to_fixed(s.flows, bundle.denoiser.padded_len, bundle.normalizer)
    return bundle.denoiser.encoder.predict(padded)
