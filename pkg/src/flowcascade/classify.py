"""The three classification phases: benign/malicious, malware type, family.

All phases consume denoiser latents. The binary phase is a single sigmoid
scored against a fixed threshold; type and family phases are softmax
multiclass models with first-class tie-breaking on argmax.
"""

from dataclasses import dataclass, field

import numpy as np

from .encoding import BENIGN_LABEL
from .nn import Network, TrainConfig, net_from_dict, net_to_dict, train

MALWARE_TYPES = ("adware", "ransomware", "trojan", "virus", "worm")
MALICIOUS_LABEL = "malicious"


@dataclass
class MalwareTaxonomy:
    """The five fixed types and a configurable family-to-type arrangement."""

    families_by_type: dict
    types: tuple = MALWARE_TYPES

    def __post_init__(self):
        if tuple(self.types) != MALWARE_TYPES:
            raise ValueError(f"types must be exactly {MALWARE_TYPES}")
        seen = {}
        for t, fams in self.families_by_type.items():
            if t not in self.types:
                raise ValueError(f"unknown malware type {t!r}")
            for fam in fams:
                if fam in seen:
                    raise ValueError(f"family {fam!r} assigned to two types")
                seen[fam] = t
        self._type_of = seen

    def type_of(self, family: str) -> str:
        try:
            return self._type_of[family]
        except KeyError:
            raise KeyError(f"family {family!r} is not in the taxonomy") from None

    @property
    def families(self):
        return tuple(self._type_of)


@dataclass
class PhaseModel:
    """One trained phase: 'binary', 'type', or 'family:<type>'."""

    phase: str
    network: Network
    class_names: list
    decision_threshold: float = 0.5
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "class_names": list(self.class_names),
            "decision_threshold": self.decision_threshold,
            "network": net_to_dict(self.network),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PhaseModel":
        return cls(
            phase=doc["phase"],
            network=net_from_dict(doc["network"]),
            class_names=list(doc["class_names"]),
            decision_threshold=doc["decision_threshold"],
        )


def _one_hot(labels, class_names):
    index = {c: i for i, c in enumerate(class_names)}
    out = np.zeros((len(labels), len(class_names)))
    for i, lab in enumerate(labels):
        if lab not in index:
            raise ValueError(f"label {lab!r} is not a class of this phase")
        out[i, index[lab]] = 1.0
    return out


def train_phase(
    phase: str,
    latents: np.ndarray,
    labels,
    class_names,
    config: TrainConfig,
    hidden=(128, 64),
    init_seed: int = 0,
    decision_threshold: float = 0.5,
) -> PhaseModel:
    """Train one cascade phase on latent vectors.

    binary -> 1 sigmoid output with binary cross-entropy; multiclass phases
    -> softmax with categorical cross-entropy. Every class in class_names
    must occur in the training labels. latents may be a lazy row source
    (anything with .width and .rows()).
    """
    if hasattr(latents, "width"):
        in_dim = latents.width
    else:
        latents = np.asarray(latents, dtype=np.float64)
        in_dim = latents.shape[1]
    labels = list(labels)
    class_names = list(class_names)
    present = set(labels)
    for c in class_names:
        if c not in present:
            raise ValueError(f"class {c!r} has no training samples")
    for lab in present:
        if lab not in class_names:
            raise ValueError(f"label {lab!r} is not a class of this phase")
    if phase == "binary":
        if class_names != [BENIGN_LABEL, MALICIOUS_LABEL]:
            raise ValueError("binary phase classes must be [benign, malicious]")
        sizes = [in_dim, *hidden, 1]
        acts = ["relu"] * len(hidden) + ["sigmoid"]
        net = Network.create(sizes, acts, "binary-cross-entropy", seed=init_seed)
        targets = np.array([[1.0 if l == MALICIOUS_LABEL else 0.0] for l in labels])
    else:
        sizes = [in_dim, *hidden, len(class_names)]
        acts = ["relu"] * len(hidden) + ["softmax"]
        net = Network.create(sizes, acts, "categorical-cross-entropy", seed=init_seed)
        targets = _one_hot(labels, class_names)
    history = train(net, latents, targets, config)
    return PhaseModel(
        phase=phase,
        network=net,
        class_names=class_names,
        decision_threshold=decision_threshold,
        history=history,
    )


def predict_binary(model: PhaseModel, latent):
    """(label, score); malicious iff score >= threshold. Batched input gives
    (labels list, scores array)."""
    single = np.ndim(latent) == 1
    scores = np.atleast_2d(model.network.forward(latent))[:, 0]
    labels = [
        MALICIOUS_LABEL if s >= model.decision_threshold else BENIGN_LABEL
        for s in scores
    ]
    if single:
        return labels[0], float(scores[0])
    return labels, scores


def predict_multiclass(model: PhaseModel, latent):
    """(class name, probability vector); argmax ties go to class order."""
    single = np.ndim(latent) == 1
    probs = np.atleast_2d(model.network.forward(latent))
    picks = [model.class_names[i] for i in probs.argmax(axis=1)]
    if single:
        return picks[0], probs[0]
    return picks, probs


def predict_type(model: PhaseModel, latent):
    return predict_multiclass(model, latent)


def predict_family(family_models: dict, predicted_type: str, latent):
    """Dispatch to the predicted type's family model (even if the type call
    was wrong; family error conditional on type error is expected)."""
    if predicted_type not in family_models:
        raise KeyError(f"no family model for type {predicted_type!r}")
    return predict_multiclass(family_models[predicted_type], latent)
