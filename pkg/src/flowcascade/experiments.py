"""Experiment designs: clean classification, noise sweeps, unseen families,
tier comparison, end-to-end cascade, and the denoiser ablation.

Family-phase metrics condition on the TRUE type (they measure phase-3 quality
in isolation); the cascade experiment reports the uncorrected end-to-end
numbers separately.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .classify import BENIGN_LABEL, MALICIOUS_LABEL, MALWARE_TYPES, predict_binary, predict_family, predict_multiclass
from .dataset import FlowDataset
from .denoise import pad_to_fixed
from .metrics import Metrics, compute_metrics
from .pipeline import TierBundle
from .synth import build_noisy_eval_set
from .trainer import audit_quarantine
from .util import stage_seed

# Headline F1 levels reported for the original full-scale corpus; desk-scale
# synthetic runs are judged against the property thresholds instead, and these
# anchors are carried in result documents for context only.
REFERENCE_ANCHORS = {
    "binary_f1": 0.98,
    "type_weighted_f1": 0.93,
    "family_aggregate_f1": 0.91,
    "tier3_binary_noisy_f1": {"2": 0.80, "4": 0.77, "8": 0.56},
    "unseen_f1_range": [0.91, 0.78],
}


@dataclass
class NoiseSweepResult:
    tier_index: int
    phase: str
    by_ratio: dict  # ratio -> Metrics, ascending ratio order
    spearman_f1_vs_ratio: float

    def f1_curve(self) -> list:
        return [(r, self.by_ratio[r].weighted_f1) for r in sorted(self.by_ratio)]

    def to_dict(self) -> dict:
        return {
            "tier": self.tier_index,
            "phase": self.phase,
            "spearman_f1_vs_ratio": self.spearman_f1_vs_ratio,
            "by_ratio": {str(r): m.to_dict() for r, m in self.by_ratio.items()},
        }


def _padded_matrix(samples, padded_len, normalizer) -> np.ndarray:
    out = np.zeros((len(samples), padded_len * 11))
    for i, s in enumerate(samples):
        out[i] = pad_to_fixed(s.flows, padded_len, normalizer)
    return out


def _latents(bundle: TierBundle, samples) -> np.ndarray:
    padded = _padded_matrix(samples, bundle.denoiser.padded_len, bundle.normalizer)
    return bundle.denoiser.encoder.predict(padded)


def _binary_metrics(bundle, samples) -> Metrics:
    latents = _latents(bundle, samples)
    predicted, _ = predict_binary(bundle.binary, latents)
    truth = [BENIGN_LABEL if s.label == BENIGN_LABEL else MALICIOUS_LABEL for s in samples]
    return compute_metrics(truth, predicted, [BENIGN_LABEL, MALICIOUS_LABEL])


def _spearman(ratios, f1s) -> float:
    if len(ratios) < 2:
        return 0.0
    rho = stats.spearmanr(ratios, f1s).statistic
    return 0.0 if np.isnan(rho) else float(rho)


def _test_sets(dataset: FlowDataset, tier_index: int, unseen=False):
    tier_windows = dataset.tier_windows(tier_index)
    source = tier_windows.unseen if unseen else tier_windows.test_mal
    malicious = [dataset.window_sample(rows, fam) for fam, rows in source]
    benign = [dataset.window_sample(rows, BENIGN_LABEL) for rows in tier_windows.benign_test]
    return malicious, benign


def run_clean_experiment(bundle: TierBundle, dataset: FlowDataset) -> dict:
    """Ideal-conditions metrics for one tier: clean windows only."""
    taxonomy = dataset.universe.taxonomy
    malicious, benign = _test_sets(dataset, bundle.config.tier_index)
    out = {
        "tier": bundle.config.tier_index,
        "reference_anchors": REFERENCE_ANCHORS,
        "binary": _binary_metrics(bundle, benign + malicious).to_dict(),
    }
    mal_latents = _latents(bundle, malicious)
    true_types = [taxonomy.type_of(s.label) for s in malicious]
    predicted_types, _ = predict_multiclass(bundle.type_model, mal_latents)
    out["type"] = compute_metrics(true_types, predicted_types, list(MALWARE_TYPES)).to_dict()
    families = {}
    for mal_type in MALWARE_TYPES:
        idx = [i for i, t in enumerate(true_types) if t == mal_type]
        fams = sorted(taxonomy.families_by_type[mal_type])
        predicted, _ = predict_multiclass(bundle.family_models[mal_type], mal_latents[idx])
        truth = [malicious[i].label for i in idx]
        families[mal_type] = compute_metrics(truth, predicted, fams).to_dict()
    out["family"] = families
    return out


def run_noise_sweep(
    bundle: TierBundle,
    dataset: FlowDataset,
    phase: str,
    ratios,
    seed: int = 0,
    unseen: bool = False,
) -> NoiseSweepResult:
    """Metrics per noise ratio for one tier and phase, with the monotone-trend
    statistic (Spearman correlation of weighted F1 against ratio)."""
    taxonomy = dataset.universe.taxonomy
    malicious, benign = _test_sets(dataset, bundle.config.tier_index, unseen=unseen)
    pool = dataset.pool_flows("test")
    eval_sets = build_noisy_eval_set(
        malicious,
        ratios,
        pool,
        seed=stage_seed(seed, f"sweep:{bundle.config.tier_index}:{phase}:{unseen}"),
        benign_windows=benign,
    )
    by_ratio = {}
    for r in sorted(eval_sets):
        sets = eval_sets[r]
        if phase == "binary":
            by_ratio[r] = _binary_metrics(bundle, sets["benign"] + sets["malicious"])
        elif phase == "type":
            latents = _latents(bundle, sets["malicious"])
            truth = [taxonomy.type_of(s.label) for s in sets["malicious"]]
            predicted, _ = predict_multiclass(bundle.type_model, latents)
            by_ratio[r] = compute_metrics(truth, predicted, list(MALWARE_TYPES))
        elif phase.startswith("family:"):
            mal_type = phase.split(":", 1)[1]
            fams = sorted(taxonomy.families_by_type[mal_type])
            keep = [s for s in sets["malicious"] if taxonomy.type_of(s.label) == mal_type]
            latents = _latents(bundle, keep)
            predicted, _ = predict_multiclass(bundle.family_models[mal_type], latents)
            by_ratio[r] = compute_metrics([s.label for s in keep], predicted, fams)
        else:
            raise ValueError(f"unknown phase {phase!r}")
    rs = sorted(by_ratio)
    rho = _spearman(rs, [by_ratio[r].weighted_f1 for r in rs])
    return NoiseSweepResult(
        tier_index=bundle.config.tier_index,
        phase=phase,
        by_ratio=by_ratio,
        spearman_f1_vs_ratio=rho,
    )


def run_unseen_experiment(bundle: TierBundle, dataset: FlowDataset, ratios, seed: int = 0) -> dict:
    """Binary detection of quarantined families vs the known-family sweep."""
    tier_windows = dataset.tier_windows(bundle.config.tier_index)
    if not tier_windows.unseen:
        raise ValueError("dataset has no unseen-family windows")
    audit_quarantine(dataset, tier_windows)  # refuse to report on leakage
    unseen_sweep = run_noise_sweep(bundle, dataset, "binary", ratios, seed=seed, unseen=True)
    known_sweep = run_noise_sweep(bundle, dataset, "binary", ratios, seed=seed, unseen=False)
    delta = {
        r: known_sweep.by_ratio[r].weighted_f1 - unseen_sweep.by_ratio[r].weighted_f1
        for r in unseen_sweep.by_ratio
    }
    return {
        "tier": bundle.config.tier_index,
        "unseen": unseen_sweep,
        "known": known_sweep,
        "delta_known_minus_unseen": delta,
    }


def run_tier_comparison(bundles, dataset: FlowDataset, ratios, seed: int = 0) -> dict:
    """Aligned binary sweeps for every tier plus the per-ratio tier ordering."""
    sweeps = {
        b.config.tier_index: run_noise_sweep(b, dataset, "binary", ratios, seed=seed)
        for b in bundles
    }
    ordering = {}
    for r in sorted(set(float(x) for x in ratios)):
        scored = [(t, sweeps[t].by_ratio[r].weighted_f1) for t in sorted(sweeps)]
        ordering[r] = [t for t, _ in sorted(scored, key=lambda x: -x[1])]
    return {"sweeps": sweeps, "tier_order_by_ratio": ordering}


def run_cascade_experiment(bundle: TierBundle, dataset: FlowDataset) -> dict:
    """End-to-end verdicts on clean test windows. A malicious window counts
    as correct only when binary, type, and family are all right; a benign
    window only when predicted benign. Type/family are never invoked for
    predicted-benign windows."""
    taxonomy = dataset.universe.taxonomy
    malicious, benign = _test_sets(dataset, bundle.config.tier_index)
    samples = benign + malicious
    latents = _latents(bundle, samples)
    binary_pred, _ = predict_binary(bundle.binary, latents)

    n_correct = 0
    phase_hits = {"binary": 0, "type": 0, "family": 0}
    type_calls = 0
    for i, s in enumerate(samples):
        is_mal = s.label != BENIGN_LABEL
        bin_ok = (binary_pred[i] == MALICIOUS_LABEL) == is_mal
        phase_hits["binary"] += bin_ok
        if binary_pred[i] == BENIGN_LABEL:
            n_correct += bin_ok
            continue
        type_calls += 1
        mal_type, _ = predict_multiclass(bundle.type_model, latents[i])
        family, _ = predict_family(bundle.family_models, mal_type, latents[i])
        if not is_mal:
            continue  # binary already wrong; cascade output is wrong
        true_type = taxonomy.type_of(s.label)
        type_ok = mal_type == true_type
        family_ok = family == s.label
        phase_hits["type"] += type_ok
        phase_hits["family"] += family_ok
        n_correct += bin_ok and type_ok and family_ok
    n_mal = len(malicious)
    return {
        "tier": bundle.config.tier_index,
        "cascade_accuracy": n_correct / len(samples),
        "binary_accuracy": phase_hits["binary"] / len(samples),
        "type_accuracy_given_detected": phase_hits["type"] / max(1, n_mal),
        "family_accuracy_given_detected": phase_hits["family"] / max(1, n_mal),
        "type_phase_invocations": type_calls,
        "n_samples": len(samples),
    }


def run_denoiser_ablation(
    bundle: TierBundle,
    raw_model,
    dataset: FlowDataset,
    ratios=(1.0, 2.0, 4.0, 8.0),
    seed: int = 0,
) -> dict:
    """Latent-input vs raw-padded-input binary classification on the same
    noisy evaluation sets, pooled across the requested ratios."""
    malicious, benign = _test_sets(dataset, bundle.config.tier_index)
    pool = dataset.pool_flows("test")
    eval_sets = build_noisy_eval_set(
        malicious, ratios, pool,
        seed=stage_seed(seed, f"ablation:{bundle.config.tier_index}"),
        benign_windows=benign,
    )
    truth_all, latent_pred_all, raw_pred_all = [], [], []
    per_ratio = {}
    for r in sorted(eval_sets):
        samples = eval_sets[r]["benign"] + eval_sets[r]["malicious"]
        padded = _padded_matrix(samples, bundle.denoiser.padded_len, bundle.normalizer)
        latents = bundle.denoiser.encoder.predict(padded)
        latent_pred, _ = predict_binary(bundle.binary, latents)
        raw_pred, _ = predict_binary(raw_model, padded)
        truth = [BENIGN_LABEL if s.label == BENIGN_LABEL else MALICIOUS_LABEL for s in samples]
        classes = [BENIGN_LABEL, MALICIOUS_LABEL]
        per_ratio[r] = {
            "latent_f1": compute_metrics(truth, latent_pred, classes).weighted_f1,
            "raw_f1": compute_metrics(truth, raw_pred, classes).weighted_f1,
        }
        truth_all += truth
        latent_pred_all += latent_pred
        raw_pred_all += raw_pred
    classes = [BENIGN_LABEL, MALICIOUS_LABEL]
    return {
        "tier": bundle.config.tier_index,
        "per_ratio": per_ratio,
        "latent_f1": compute_metrics(truth_all, latent_pred_all, classes).weighted_f1,
        "raw_f1": compute_metrics(truth_all, raw_pred_all, classes).weighted_f1,
    }
