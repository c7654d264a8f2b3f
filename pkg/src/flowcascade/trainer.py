"""Training orchestration for tier bundles.

One bundle = fitted normalizer + denoising autoencoder + binary classifier
(+ type and per-type family classifiers unless binary_only). The denoiser
and every classifier train across all noise ratios of their phase at once;
noise is always drawn from the training pool, never the test pool.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .classify import MALICIOUS_LABEL, MALWARE_TYPES, PhaseModel, train_phase
from .dataset import FlowDataset
from .denoise import (
    DenoiserSpec,
    PaddedWindows,
    make_noisy_rows,
    noise_count,
    train_denoiser_rows,
)
from .encoding import BENIGN_LABEL, fit_normalizer
from .nn import TrainConfig
from .pipeline import TierBundle, TierConfig
from .util import stage_seed


class QuarantineError(Exception):
    """Unseen-family material leaked into a training artifact."""


@dataclass
class TierTrainSettings:
    # one model per phase across all noise levels: the training grid covers
    # the evaluation grid (binary up to ratio 8, type/family up to 2)
    ratios_binary: tuple = (0.0, 0.2, 0.4, 0.8, 1.0, 2.0, 4.0, 8.0)
    ratios_multi: tuple = (0.0, 0.2, 0.4, 0.8, 1.0, 2.0)
    dae_hidden: tuple = (192,)
    dae_latent: int | None = None
    dae_epochs: int = 12
    clf_hidden: tuple = (128, 64)
    clf_epochs: int = 40
    batch_size: int = 80
    learning_rate: float = 0.004
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "ratios_binary": list(self.ratios_binary),
            "ratios_multi": list(self.ratios_multi),
            "dae_hidden": list(self.dae_hidden),
            "dae_latent": self.dae_latent,
            "dae_epochs": self.dae_epochs,
            "clf_hidden": list(self.clf_hidden),
            "clf_epochs": self.clf_epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TierTrainSettings":
        out = cls()
        for key, value in doc.items():
            if not hasattr(out, key):
                raise ValueError(f"unknown training setting {key!r}")
            if key.startswith(("ratios", "dae_hidden", "clf_hidden")):
                value = tuple(value)
            setattr(out, key, value)
        return out


def audit_quarantine(dataset: FlowDataset, tier_windows) -> None:
    """Refuse to train when unseen-family flows appear in training material."""
    unseen = set(dataset.universe.unseen)
    for fam, rows in tier_windows.train_mal:
        if fam in unseen:
            raise QuarantineError(f"unseen family {fam!r} in training windows")
        for i in rows:
            lab = dataset.flows[int(i)].label
            if lab in unseen:
                raise QuarantineError(f"unseen family flow {lab!r} inside window {fam!r}")
    for i in dataset.pool_rows("train"):
        if dataset.flows[int(i)].label != BENIGN_LABEL:
            raise QuarantineError("training noise pool contains non-benign flows")
    for rows in tier_windows.benign_train:
        for i in rows:
            if dataset.flows[int(i)].label != BENIGN_LABEL:
                raise QuarantineError("benign training windows contain non-benign flows")


@dataclass
class _TrainWindows:
    windows: list  # row-index arrays, noisy realizations included
    families: list  # family name, or None for benign
    ratios: list
    padded_len: int


def _build_training_windows(dataset, tier_windows, settings) -> _TrainWindows:
    m = tier_windows.window_size
    ratios = sorted(set(float(r) for r in settings.ratios_binary) | {0.0})
    padded_len = m + noise_count(max(ratios), m)
    pool = dataset.pool_rows("train")
    rng = np.random.default_rng(stage_seed(settings.seed, f"clf-noise:{m}"))
    windows, families, ratio_tags = [], [], []
    for r in ratios:
        for fam, rows in tier_windows.train_mal:
            windows.append(make_noisy_rows(rows, pool, r, rng))
            families.append(fam)
            ratio_tags.append(r)
    for r in ratios:
        if r == 0.0:
            for rows in tier_windows.benign_train:
                windows.append(np.asarray(rows))
                families.append(None)
                ratio_tags.append(r)
        else:
            length = m + noise_count(r, m)
            for _ in range(len(tier_windows.train_mal)):
                windows.append(pool[rng.integers(0, len(pool), length)])
                families.append(None)
                ratio_tags.append(r)
    return _TrainWindows(windows, families, ratio_tags, padded_len)


@dataclass
class TierFrontEnd:
    """The shared, expensive half of tier training: fitted normalizer,
    trained denoiser, and latents for every noisy training window."""

    tier_index: int
    window_size: int
    normalizer: object
    table: np.ndarray
    dae: object
    dae_history: list
    train_windows: _TrainWindows
    latents: np.ndarray


def prepare_tier_front_end(
    dataset: FlowDataset, tier_index: int, settings: TierTrainSettings
) -> TierFrontEnd:
    tier_windows = dataset.tier_windows(tier_index)
    audit_quarantine(dataset, tier_windows)
    m = tier_windows.window_size

    train_rows = np.concatenate(
        [rows for _, rows in tier_windows.train_mal]
        + list(tier_windows.benign_train)
        + [dataset.pool_rows("train")]
    )
    normalizer = fit_normalizer(dataset.raw_features[train_rows])
    table = normalizer.apply_matrix(dataset.raw_features)

    dae, dae_history = train_denoiser_rows(
        table,
        [rows for _, rows in tier_windows.train_mal],
        settings.ratios_binary,
        dataset.pool_rows("train"),
        m,
        TrainConfig(
            batch_size=settings.batch_size,
            epochs=settings.dae_epochs,
            learning_rate=settings.learning_rate,
            shuffle_seed=stage_seed(settings.seed, f"dae-shuffle:{m}"),
        ),
        DenoiserSpec(
            hidden=settings.dae_hidden,
            latent_dim=settings.dae_latent,
            init_seed=stage_seed(settings.seed, f"dae-init:{m}"),
        ),
        noise_seed=stage_seed(settings.seed, f"dae-noise:{m}"),
    )

    tw = _build_training_windows(dataset, tier_windows, settings)
    if tw.padded_len != dae.padded_len:
        raise ValueError("classifier and denoiser padded capacities disagree")
    latents = dae.encode_source(PaddedWindows(table, tw.windows, tw.padded_len))
    return TierFrontEnd(
        tier_index=tier_index,
        window_size=m,
        normalizer=normalizer,
        table=table,
        dae=dae,
        dae_history=dae_history,
        train_windows=tw,
        latents=latents,
    )


def train_tier_bundle(
    dataset: FlowDataset,
    tier_index: int,
    settings: TierTrainSettings = TierTrainSettings(),
    binary_only: bool = False,
    front_end: TierFrontEnd | None = None,
):
    """Train every model of one tier. Returns (TierBundle, history dict)."""
    t0 = time.perf_counter()
    if front_end is None or front_end.tier_index != tier_index:
        front_end = prepare_tier_front_end(dataset, tier_index, settings)
    m = front_end.window_size
    dae = front_end.dae
    tw = front_end.train_windows
    latents = front_end.latents
    normalizer = front_end.normalizer
    history = {"tier": tier_index, "window_size": m, "denoiser_loss": front_end.dae_history}

    binary_labels = [
        BENIGN_LABEL if fam is None else MALICIOUS_LABEL for fam in tw.families
    ]
    clf_config = TrainConfig(
        batch_size=settings.batch_size,
        epochs=settings.clf_epochs,
        learning_rate=settings.learning_rate,
        shuffle_seed=stage_seed(settings.seed, f"binary-shuffle:{m}"),
    )
    binary = train_phase(
        "binary",
        latents,
        binary_labels,
        [BENIGN_LABEL, MALICIOUS_LABEL],
        clf_config,
        hidden=settings.clf_hidden,
        init_seed=stage_seed(settings.seed, f"binary-init:{m}"),
    )
    history["binary_loss"] = binary.history

    type_model = None
    family_models = {}
    if not binary_only:
        multi = set(float(r) for r in settings.ratios_multi) | {0.0}
        keep = [
            i
            for i, (fam, r) in enumerate(zip(tw.families, tw.ratios))
            if fam is not None and r in multi
        ]
        mal_latents = latents[keep]
        mal_families = [tw.families[i] for i in keep]
        type_labels = [dataset.universe.taxonomy.type_of(f) for f in mal_families]
        type_model = train_phase(
            "type",
            mal_latents,
            type_labels,
            list(MALWARE_TYPES),
            TrainConfig(
                batch_size=settings.batch_size,
                epochs=settings.clf_epochs,
                learning_rate=settings.learning_rate,
                shuffle_seed=stage_seed(settings.seed, f"type-shuffle:{m}"),
            ),
            hidden=settings.clf_hidden,
            init_seed=stage_seed(settings.seed, f"type-init:{m}"),
        )
        history["type_loss"] = type_model.history
        for mal_type in MALWARE_TYPES:
            idx = [i for i, t in enumerate(type_labels) if t == mal_type]
            fams = sorted(dataset.universe.taxonomy.families_by_type[mal_type])
            family_models[mal_type] = train_phase(
                f"family:{mal_type}",
                mal_latents[idx],
                [mal_families[i] for i in idx],
                fams,
                TrainConfig(
                    batch_size=settings.batch_size,
                    epochs=settings.clf_epochs,
                    learning_rate=settings.learning_rate,
                    shuffle_seed=stage_seed(settings.seed, f"family-shuffle:{mal_type}:{m}"),
                ),
                hidden=settings.clf_hidden,
                init_seed=stage_seed(settings.seed, f"family-init:{mal_type}:{m}"),
            )
            history[f"family_loss:{mal_type}"] = family_models[mal_type].history

    bundle = TierBundle(
        # the window capacity must match what the denoiser was trained to pad
        config=TierConfig(
            tier_index=tier_index,
            window_size=m,
            r_max_binary=max(settings.ratios_binary),
            r_max_multiclass=max(settings.ratios_multi),
        ),
        normalizer=normalizer,
        denoiser=dae,
        binary=binary,
        type_model=type_model,
        family_models=family_models,
    )
    history["train_seconds"] = time.perf_counter() - t0
    return bundle, history


def train_raw_binary(
    dataset: FlowDataset, tier_index: int, settings: TierTrainSettings = TierTrainSettings()
) -> PhaseModel:
    """Ablation baseline: the same binary task trained on raw zero-padded
    window vectors instead of denoiser latents (same architecture/budget)."""
    tier_windows = dataset.tier_windows(tier_index)
    audit_quarantine(dataset, tier_windows)
    m = tier_windows.window_size
    train_rows = np.concatenate(
        [rows for _, rows in tier_windows.train_mal]
        + list(tier_windows.benign_train)
        + [dataset.pool_rows("train")]
    )
    normalizer = fit_normalizer(dataset.raw_features[train_rows])
    table = normalizer.apply_matrix(dataset.raw_features)
    tw = _build_training_windows(dataset, tier_windows, settings)
    X = PaddedWindows(table, tw.windows, tw.padded_len)
    labels = [BENIGN_LABEL if fam is None else MALICIOUS_LABEL for fam in tw.families]
    return train_phase(
        "binary",
        X,
        labels,
        [BENIGN_LABEL, MALICIOUS_LABEL],
        TrainConfig(
            batch_size=settings.batch_size,
            epochs=settings.clf_epochs,
            learning_rate=settings.learning_rate,
            shuffle_seed=stage_seed(settings.seed, f"raw-binary-shuffle:{m}"),
        ),
        hidden=settings.clf_hidden,
        init_seed=stage_seed(settings.seed, f"raw-binary-init:{m}"),
    )
