"""Session-scoped training fixtures shared by the experiment and acceptance
tests. Everything heavy (dataset generation, the four tier bundles, the raw
ablation baseline) trains once per pytest session with fixed seeds."""

import time

import pytest

from flowcascade.dataset import DatasetSpec, build_dataset
from flowcascade.synth import default_universe
from flowcascade.trainer import TierTrainSettings, train_raw_binary, train_tier_bundle

ACCEPT_SETTINGS = TierTrainSettings(seed=1)
SWEEP_SEED = 5
ABLATION_SEED = 6
UNSEEN_SEED = 7


@pytest.fixture(scope="session")
def acceptance_dataset():
    universe = default_universe(seed=7)
    spec = DatasetSpec(
        windows_per_family_train=64,
        windows_per_family_test=20,
        tiers=(1, 2, 3, 4),
        seed=0,
    )
    return build_dataset(universe, spec)


@pytest.fixture(scope="session")
def tier3_bundle(acceptance_dataset):
    """(bundle, history, train_seconds) for the fully-populated tier 3."""
    t0 = time.perf_counter()
    bundle, history = train_tier_bundle(acceptance_dataset, 3, ACCEPT_SETTINGS)
    return bundle, history, time.perf_counter() - t0


@pytest.fixture(scope="session")
def tier_bundles(acceptance_dataset, tier3_bundle):
    """All four tiers at the same training budget (1/2/4 binary-only)."""
    bundles = {}
    for tier in (1, 2, 4):
        bundle, _ = train_tier_bundle(
            acceptance_dataset, tier, ACCEPT_SETTINGS, binary_only=True
        )
        bundles[tier] = bundle
    bundles[3] = tier3_bundle[0]
    return bundles


@pytest.fixture(scope="session")
def raw_tier3_binary(acceptance_dataset):
    return train_raw_binary(acceptance_dataset, 3, ACCEPT_SETTINGS)
