"""Benign-noise injection and the denoising autoencoder front-end.

The autoencoder trains on (noisy, clean) pairs: benign flows are injected at
random positions into clean malicious windows and the net learns to
reconstruct the clean window. At inference only the encoder runs; its latent
vector is what every downstream classifier consumes.

Variable-length noisy windows are reconciled with the fixed network input by
zero-padding up to padded_len = M + round(r_max * M) flow slots, where r_max
is the largest training noise ratio.
"""

from dataclasses import dataclass

import numpy as np

from .encoding import N_FEATURES, Normalizer, WindowSample, encode_flow_matrix
from .nn import Network, TrainConfig, net_from_dict, net_to_dict, train


@dataclass
class NoiseSpec:
    """Injection ratio r (benign count = round(r * M)) plus the benign pool."""

    ratio: float
    benign_pool: list
    rng_seed: int = 0

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError("noise ratio must be >= 0")
        if self.ratio > 0 and not self.benign_pool:
            raise ValueError("noise ratio > 0 needs a non-empty benign pool")


def _inject(items, pool, count, rng):
    """Insert `count` pool draws (uniform, with replacement) at uniform random
    positions, preserving the relative order of the original items."""
    out = list(items)
    for _ in range(count):
        picked = pool[int(rng.integers(0, len(pool)))]
        pos = int(rng.integers(0, len(out) + 1))
        out.insert(pos, picked)
    return out


def noise_count(ratio: float, window_size: int) -> int:
    return int(round(ratio * window_size))


def make_noisy(clean: WindowSample, spec: NoiseSpec) -> list:
    """Benign-injected copy of a clean malicious window's flow sequence."""
    k = noise_count(spec.ratio, clean.size)
    if k == 0:
        return list(clean.flows)
    if not spec.benign_pool:
        raise ValueError("noise ratio > 0 needs a non-empty benign pool")
    rng = np.random.default_rng(spec.rng_seed)
    return _inject(clean.flows, spec.benign_pool, k, rng)


def make_noisy_rows(window_rows, pool_rows, ratio, rng) -> np.ndarray:
    """Index-level twin of make_noisy: operates on row indices into a shared
    feature table. Same rng consumption, so layouts match the object path."""
    k = noise_count(ratio, len(window_rows))
    if k == 0:
        return np.asarray(window_rows, dtype=np.int64)
    if len(pool_rows) == 0:
        raise ValueError("noise ratio > 0 needs a non-empty benign pool")
    return np.array(_inject(list(window_rows), list(pool_rows), k, rng), dtype=np.int64)


def pad_to_fixed(flows, padded_len: int, normalizer: Normalizer) -> np.ndarray:
    """Encode flows in time order and zero-pad to padded_len slots."""
    if len(flows) > padded_len:
        raise ValueError(
            f"{len(flows)} flows exceed the padded capacity of {padded_len}"
        )
    out = np.zeros(padded_len * N_FEATURES)
    if flows:
        enc = normalizer.apply_matrix(encode_flow_matrix(flows))
        out[: enc.size] = enc.reshape(-1)
    return out


class PaddedWindows:
    """Lazy (n, padded_len*11) row source over a normalized feature table.

    Row i is table[windows[i]] flattened and zero-padded; nothing is
    materialized until a mini-batch asks for it.
    """

    def __init__(self, table: np.ndarray, windows: list, padded_len: int):
        for w in windows:
            if len(w) > padded_len:
                raise ValueError(
                    f"window of {len(w)} flows exceeds padded capacity {padded_len}"
                )
        self.table = table
        self.windows = windows
        self.padded_len = padded_len
        self.width = padded_len * N_FEATURES

    def __len__(self):
        return len(self.windows)

    def rows(self, idx) -> np.ndarray:
        out = np.zeros((len(idx), self.width))
        for i, w in enumerate(np.asarray(idx, dtype=np.int64)):
            rows = self.windows[w]
            out[i, : len(rows) * N_FEATURES] = self.table[rows].reshape(-1)
        return out


@dataclass
class DenoiserSpec:
    """Architecture knobs; the latent defaults to half the clean width."""

    hidden: tuple = (192,)
    latent_dim: int | None = None
    init_seed: int = 0


@dataclass
class DenoisingAutoencoder:
    encoder: Network
    decoder: Network
    window_size: int
    padded_len: int
    latent_dim: int

    def encode_flows(self, noisy_flows, normalizer: Normalizer) -> np.ndarray:
        """Latent vector for one flow sequence (pad, then encoder forward)."""
        return self.encoder.forward(pad_to_fixed(noisy_flows, self.padded_len, normalizer))

    def encode_source(self, source) -> np.ndarray:
        """Latent matrix for a PaddedWindows source (or padded matrix)."""
        return self.encoder.predict(source)

    def reconstruct(self, padded) -> np.ndarray:
        return self.decoder.forward(self.encoder.forward(padded))

    def to_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "padded_len": self.padded_len,
            "latent_dim": self.latent_dim,
            "encoder": net_to_dict(self.encoder),
            "decoder": net_to_dict(self.decoder),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DenoisingAutoencoder":
        return cls(
            encoder=net_from_dict(doc["encoder"]),
            decoder=net_from_dict(doc["decoder"]),
            window_size=doc["window_size"],
            padded_len=doc["padded_len"],
            latent_dim=doc["latent_dim"],
        )


def build_autoencoder(window_size, padded_len, spec: DenoiserSpec):
    """One trainable selu MLP: padded input -> latent -> clean window."""
    latent = spec.latent_dim or (window_size * N_FEATURES) // 2
    enc_sizes = [padded_len * N_FEATURES, *spec.hidden, latent]
    dec_sizes = [latent, *reversed(spec.hidden), window_size * N_FEATURES]
    sizes = enc_sizes + dec_sizes[1:]
    acts = ["selu"] * (len(sizes) - 2) + ["identity"]
    net = Network.create(sizes, acts, "mean-squared-error", seed=spec.init_seed)
    return net, latent, len(enc_sizes) - 1


def split_autoencoder(net: Network, n_encoder_layers, window_size, padded_len, latent):
    encoder = Network(layers=net.layers[:n_encoder_layers], loss="mean-squared-error")
    decoder = Network(layers=net.layers[n_encoder_layers:], loss="mean-squared-error")
    return DenoisingAutoencoder(
        encoder=encoder,
        decoder=decoder,
        window_size=window_size,
        padded_len=padded_len,
        latent_dim=latent,
    )


def denoiser_pairs_rows(window_rows_list, pool_rows, ratios, noise_seed):
    """Noisy-row realizations for every (window, ratio) pair, r=0 included."""
    rlist = sorted(set(float(r) for r in ratios) | {0.0})
    rng = np.random.default_rng(noise_seed)
    noisy, clean_idx = [], []
    for r in rlist:
        for i, w in enumerate(window_rows_list):
            noisy.append(make_noisy_rows(w, pool_rows, r, rng))
            clean_idx.append(i)
    return noisy, np.array(clean_idx), max(rlist)


def train_denoiser_rows(
    table,
    window_rows_list,
    ratios,
    pool_rows,
    window_size,
    config: TrainConfig,
    arch: DenoiserSpec = DenoiserSpec(),
    noise_seed: int = 1,
    padded_len: int | None = None,
):
    """Fast-path training over a normalized feature table.

    Returns (dae, per-epoch loss history). padded_len defaults to the
    capacity implied by the largest training ratio.
    """
    if not window_rows_list:
        raise ValueError("cannot train a denoiser without clean samples")
    for w in window_rows_list:
        if len(w) != window_size:
            raise ValueError("all clean samples must share the window size")
    noisy, clean_idx, r_max = denoiser_pairs_rows(window_rows_list, pool_rows, ratios, noise_seed)
    if padded_len is None:
        padded_len = window_size + noise_count(r_max, window_size)
    X = PaddedWindows(table, noisy, padded_len)
    clean_mat = np.stack([table[w].reshape(-1) for w in window_rows_list])
    Y = clean_mat[clean_idx]
    net, latent, n_enc = build_autoencoder(window_size, padded_len, arch)
    history = train(net, X, Y, config)
    dae = split_autoencoder(net, n_enc, window_size, padded_len, latent)
    return dae, history


def train_denoiser(
    clean_samples,
    ratios,
    benign_pool,
    normalizer: Normalizer,
    config: TrainConfig,
    arch: DenoiserSpec = DenoiserSpec(),
    noise_seed: int = 1,
):
    """Train on WindowSample objects; thin wrapper over the rows fast path."""
    if not clean_samples:
        raise ValueError("cannot train a denoiser without clean samples")
    window_size = clean_samples[0].size
    flows = [f for w in clean_samples for f in w.flows] + list(benign_pool)
    table = normalizer.apply_matrix(encode_flow_matrix(flows))
    window_rows = [
        np.arange(i * window_size, (i + 1) * window_size)
        for i in range(len(clean_samples))
    ]
    pool_rows = np.arange(len(clean_samples) * window_size, len(flows))
    return train_denoiser_rows(
        table, window_rows, ratios, pool_rows, window_size, config, arch, noise_seed
    )
