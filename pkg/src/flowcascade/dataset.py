"""On-disk dataset bundles: generated flows plus window/pool arrangement.

A dataset is a flow CSV (global row order is the contract) plus a JSON
document recording the universe, the per-family row ranges, and the benign
segment boundaries. Windows are contiguous runs, so the JSON stays tiny: a
window is reconstructed from (start_row, window_size).

Benign flows are split into four disjoint segments: clean-window material
(train/test) and the two noise pools. Noise used at evaluation time never
comes from the training pool.
"""

import json
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .encoding import BENIGN_LABEL, WindowSample, encode_flow_matrix
from .meter import read_flow_csv, write_flow_csv
from .pipeline import TIER_WINDOW_SIZES
from .synth import Universe, generate_flows
from .util import stage_seed

BENIGN_SEGMENTS = ("window_train", "window_test", "pool_train", "pool_test")


@dataclass
class DatasetSpec:
    windows_per_family_train: int = 64
    windows_per_family_test: int = 20
    tiers: tuple = (1, 2, 3, 4)
    pool_train_size: int = 30000
    pool_test_size: int = 30000
    cap_per_class: int = 500
    seed: int = 0

    def __post_init__(self):
        self.tiers = tuple(sorted(set(self.tiers)))
        for t in self.tiers:
            if not 1 <= t <= 4:
                raise ValueError("tiers must be within 1..4")
        if self.windows_per_family_train > self.cap_per_class:
            self.windows_per_family_train = self.cap_per_class

    @property
    def max_window(self) -> int:
        return TIER_WINDOW_SIZES[max(self.tiers) - 1]

    @property
    def windows_per_family(self) -> int:
        return self.windows_per_family_train + self.windows_per_family_test

    def to_dict(self) -> dict:
        return {
            "windows_per_family_train": self.windows_per_family_train,
            "windows_per_family_test": self.windows_per_family_test,
            "tiers": list(self.tiers),
            "pool_train_size": self.pool_train_size,
            "pool_test_size": self.pool_test_size,
            "cap_per_class": self.cap_per_class,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        return cls(
            windows_per_family_train=doc["windows_per_family_train"],
            windows_per_family_test=doc["windows_per_family_test"],
            tiers=tuple(doc["tiers"]),
            pool_train_size=doc["pool_train_size"],
            pool_test_size=doc["pool_test_size"],
            cap_per_class=doc["cap_per_class"],
            seed=doc["seed"],
        )


@dataclass
class TierWindows:
    """Row-index views for one tier: everything the trainer and the
    experiments need, before any noise injection."""

    window_size: int
    train_mal: list  # (family, rows ndarray)
    test_mal: list
    unseen: list
    benign_train: list  # rows ndarray per clean benign window
    benign_test: list


@dataclass
class FlowDataset:
    universe: Universe
    spec: DatasetSpec
    flows: list
    family_rows: dict  # family -> [start, count]
    unseen_rows: dict
    benign_ranges: dict  # segment -> [start, stop]
    _raw_cache: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def raw_features(self) -> np.ndarray:
        return encode_flow_matrix(self.flows)

    def pool_rows(self, which: str) -> np.ndarray:
        lo, hi = self.benign_ranges[f"pool_{which}"]
        return np.arange(lo, hi)

    def pool_flows(self, which: str) -> list:
        lo, hi = self.benign_ranges[f"pool_{which}"]
        return self.flows[lo:hi]

    def window_sample(self, rows, label: str) -> WindowSample:
        return WindowSample(flows=[self.flows[int(i)] for i in rows], label=label)

    def tier_windows(self, tier_index: int) -> TierWindows:
        m = TIER_WINDOW_SIZES[tier_index - 1]
        if tier_index not in self.spec.tiers:
            raise ValueError(f"dataset was not built for tier {tier_index}")
        n_train = self.spec.windows_per_family_train
        n_test = self.spec.windows_per_family_test

        def runs(start, count):
            return [np.arange(start + i * m, start + (i + 1) * m) for i in range(count)]

        train_mal, test_mal, unseen = [], [], []
        for fam, (start, count) in self.family_rows.items():
            need = (n_train + n_test) * m
            if count < need:
                raise ValueError(f"family {fam!r} has too few flows for tier {tier_index}")
            for rows in runs(start, n_train):
                train_mal.append((fam, rows))
            for rows in runs(start + n_train * m, n_test):
                test_mal.append((fam, rows))
        for fam, (start, count) in self.unseen_rows.items():
            if count < n_test * m:
                raise ValueError(f"unseen family {fam!r} has too few flows")
            for rows in runs(start, n_test):
                unseen.append((fam, rows))

        bt_lo, bt_hi = self.benign_ranges["window_train"]
        bv_lo, bv_hi = self.benign_ranges["window_test"]
        n_benign_train = len(train_mal)
        n_benign_test = len(test_mal)
        if bt_lo + n_benign_train * m > bt_hi or bv_lo + n_benign_test * m > bv_hi:
            raise ValueError("benign window segments are too small for this tier")
        benign_train = runs(bt_lo, n_benign_train)
        benign_test = runs(bv_lo, n_benign_test)
        return TierWindows(
            window_size=m,
            train_mal=train_mal,
            test_mal=test_mal,
            unseen=unseen,
            benign_train=benign_train,
            benign_test=benign_test,
        )

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        write_flow_csv(self.flows, os.path.join(out_dir, "flows.csv"))
        doc = {
            "spec": self.spec.to_dict(),
            "universe": self.universe.to_dict(),
            "family_rows": {f: list(v) for f, v in self.family_rows.items()},
            "unseen_rows": {f: list(v) for f, v in self.unseen_rows.items()},
            "benign_ranges": {k: list(v) for k, v in self.benign_ranges.items()},
        }
        with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
        with open(os.path.join(out_dir, "profiles.json"), "w", encoding="utf-8") as fh:
            fh.write(self.universe.to_json())

    @classmethod
    def load(cls, in_dir) -> "FlowDataset":
        with open(os.path.join(in_dir, "dataset.json"), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        flows = read_flow_csv(os.path.join(in_dir, "flows.csv"))
        return cls(
            universe=Universe.from_dict(doc["universe"]),
            spec=DatasetSpec.from_dict(doc["spec"]),
            flows=flows,
            family_rows={f: tuple(v) for f, v in doc["family_rows"].items()},
            unseen_rows={f: tuple(v) for f, v in doc["unseen_rows"].items()},
            benign_ranges={k: tuple(v) for k, v in doc["benign_ranges"].items()},
        )


def build_dataset(universe: Universe, spec: DatasetSpec) -> FlowDataset:
    """Generate all flows for the requested tiers in one deterministic order:
    known families, unseen families, then the four benign segments."""
    flows = []
    family_rows = {}
    unseen_rows = {}
    per_family = spec.windows_per_family * spec.max_window
    per_unseen = spec.windows_per_family_test * spec.max_window
    host_counter = 1

    for fam in universe.known:
        start = len(flows)
        flows.extend(
            generate_flows(
                universe.known[fam],
                per_family,
                seed=stage_seed(spec.seed, f"family:{fam}"),
                host_ip=f"10.1.{host_counter // 250}.{host_counter % 250 + 1}",
            )
        )
        family_rows[fam] = (start, per_family)
        host_counter += 1
    for fam in universe.unseen:
        start = len(flows)
        flows.extend(
            generate_flows(
                universe.unseen[fam],
                per_unseen,
                seed=stage_seed(spec.seed, f"unseen:{fam}"),
                host_ip=f"10.2.{host_counter // 250}.{host_counter % 250 + 1}",
            )
        )
        unseen_rows[fam] = (start, per_unseen)
        host_counter += 1

    n_families = len(universe.known)
    benign_sizes = {
        "window_train": n_families * spec.windows_per_family_train * spec.max_window,
        "window_test": n_families * spec.windows_per_family_test * spec.max_window,
        "pool_train": spec.pool_train_size,
        "pool_test": spec.pool_test_size,
    }
    benign_ranges = {}
    for segment in BENIGN_SEGMENTS:
        start = len(flows)
        flows.extend(
            generate_flows(
                universe.benign,
                benign_sizes[segment],
                seed=stage_seed(spec.seed, f"benign:{segment}"),
                host_ip=f"10.3.0.{len(benign_ranges) + 1}",
            )
        )
        benign_ranges[segment] = (start, len(flows))

    return FlowDataset(
        universe=universe,
        spec=spec,
        flows=flows,
        family_rows=family_rows,
        unseen_rows=unseen_rows,
        benign_ranges=benign_ranges,
    )
