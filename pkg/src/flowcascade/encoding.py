"""Flow feature vectors, per-feature normalization, and window encoding.

Each flow encodes to 11 values (IP addresses are deliberately excluded so a
family cannot be recognized by whom it talks to):

    0 duration   1 rtt        2 protocol_code  3 dst_is_local  4 dst_port
    5 pkts_fwd   6 bytes_fwd  7 pkts_rev       8 bytes_rev
    9 entropy_fwd  10 entropy_rev
"""

import json
from dataclasses import dataclass

import numpy as np

from .meter import FlowRecord

FEATURE_NAMES = (
    "duration",
    "rtt",
    "protocol_code",
    "dst_is_local",
    "dst_port",
    "pkts_fwd",
    "bytes_fwd",
    "pkts_rev",
    "bytes_rev",
    "entropy_fwd",
    "entropy_rev",
)
N_FEATURES = len(FEATURE_NAMES)

# heavy-tailed counters get log1p before min-max; entropies have a fixed
# /8 range; protocol is plain min-max over observed codes; the local flag
# is already 0/1
_TRANSFORMS = (
    "log-minmax",  # duration
    "log-minmax",  # rtt
    "minmax",      # protocol_code
    "identity",    # dst_is_local
    "log-minmax",  # dst_port
    "log-minmax",  # pkts_fwd
    "log-minmax",  # bytes_fwd
    "log-minmax",  # pkts_rev
    "log-minmax",  # bytes_rev
    "div8",        # entropy_fwd
    "div8",        # entropy_rev
)


def encode_flow(flow: FlowRecord) -> np.ndarray:
    """Raw, pre-normalization feature vector for one flow."""
    return np.array(
        [
            flow.duration,
            flow.rtt,
            float(flow.protocol),
            1.0 if flow.dst_is_local else 0.0,
            float(flow.dst_port),
            float(flow.pkts_fwd),
            float(flow.bytes_fwd),
            float(flow.pkts_rev),
            float(flow.bytes_rev),
            flow.entropy_fwd,
            flow.entropy_rev,
        ],
        dtype=np.float64,
    )


def encode_flow_matrix(flows) -> np.ndarray:
    """Raw feature matrix (n, 11) for a flow sequence."""
    return np.array(
        [
            (
                f.duration,
                f.rtt,
                float(f.protocol),
                1.0 if f.dst_is_local else 0.0,
                float(f.dst_port),
                float(f.pkts_fwd),
                float(f.bytes_fwd),
                float(f.pkts_rev),
                float(f.bytes_rev),
                f.entropy_fwd,
                f.entropy_rev,
            )
            for f in flows
        ],
        dtype=np.float64,
    ).reshape(-1, N_FEATURES)


@dataclass
class Normalizer:
    """Per-feature transform fitted on training data; apply() clamps to [0, 1].

    lo/hi are bounds in transformed space (after log1p for log-minmax
    features). Constant features map to 0.
    """

    lo: np.ndarray
    hi: np.ndarray

    def apply_matrix(self, raw: np.ndarray) -> np.ndarray:
        x = np.array(raw, dtype=np.float64, copy=True).reshape(-1, N_FEATURES)
        for j, kind in enumerate(_TRANSFORMS):
            if kind == "log-minmax":
                x[:, j] = np.log1p(np.maximum(x[:, j], 0.0))
            elif kind == "div8":
                x[:, j] = x[:, j] / 8.0
        for j, kind in enumerate(_TRANSFORMS):
            if kind in ("log-minmax", "minmax"):
                span = self.hi[j] - self.lo[j]
                if span > 0:
                    x[:, j] = (x[:, j] - self.lo[j]) / span
                else:
                    x[:, j] = 0.0
        return np.clip(x, 0.0, 1.0)

    def apply(self, raw_vector: np.ndarray) -> np.ndarray:
        return self.apply_matrix(raw_vector.reshape(1, -1))[0]

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": FEATURE_NAMES[j], "transform": _TRANSFORMS[j],
                 "min": float(self.lo[j]), "max": float(self.hi[j])}
                for j in range(N_FEATURES)
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        feats = doc["features"]
        if len(feats) != N_FEATURES:
            raise ValueError("normalizer document has wrong feature count")
        lo = np.array([f["min"] for f in feats], dtype=np.float64)
        hi = np.array([f["max"] for f in feats], dtype=np.float64)
        for j, f in enumerate(feats):
            if f["transform"] != _TRANSFORMS[j] or f["name"] != FEATURE_NAMES[j]:
                raise ValueError(f"normalizer feature {j} does not match schema")
        return cls(lo=lo, hi=hi)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Normalizer":
        return cls.from_dict(json.loads(text))


def fit_normalizer(raw_vectors: np.ndarray) -> Normalizer:
    """Fit transform bounds on a raw feature matrix (training data only)."""
    raw = np.asarray(raw_vectors, dtype=np.float64).reshape(-1, N_FEATURES)
    if raw.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on an empty set")
    x = raw.copy()
    for j, kind in enumerate(_TRANSFORMS):
        if kind == "log-minmax":
            x[:, j] = np.log1p(np.maximum(x[:, j], 0.0))
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    for j, kind in enumerate(_TRANSFORMS):
        if kind in ("identity", "div8"):
            lo[j], hi[j] = 0.0, 1.0
    return Normalizer(lo=lo, hi=hi)


BENIGN_LABEL = "benign"


@dataclass
class WindowSample:
    """A window of flows plus its harness label (benign or a family name)."""

    flows: list
    label: str

    @property
    def size(self) -> int:
        return len(self.flows)


def window_label(flows) -> str:
    """Malicious family name if any flow is malicious, else benign."""
    for f in flows:
        if f.label is not None and f.label != BENIGN_LABEL:
            return f.label
    return BENIGN_LABEL


def window_encode(flows, window_size: int, normalizer: Normalizer) -> np.ndarray:
    """Encode exactly window_size time-ordered flows into a flat vector
    of length window_size * 11 (row-major, flow order preserved)."""
    if len(flows) != window_size:
        raise ValueError(f"expected exactly {window_size} flows, got {len(flows)}")
    return normalizer.apply_matrix(encode_flow_matrix(flows)).reshape(-1)
