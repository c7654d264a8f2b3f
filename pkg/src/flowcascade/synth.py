"""Synthetic labeled traffic standing in for a real malware flow corpus.

Each family is a generative profile over the 11 flow features. Types share a
behavioural archetype (ad-fetching, key-exchange/exfil, beaconing, LAN
propagation, scanning) and families jitter around it, so types separate at
medium effect size while the benign profile overlaps all of them per flow.
One trojan pair (upatre/zbot) is kept nearly identical on purpose; telling
those two apart is supposed to be hard.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .classify import MALWARE_TYPES, MalwareTaxonomy
from .encoding import BENIGN_LABEL, WindowSample
from .meter import FlowKey, FlowRecord
from .denoise import make_noisy, NoiseSpec


@dataclass
class SyntheticProfile:
    """Generative parameters for one traffic source (family or benign)."""

    family: str
    mal_type: str | None  # None = benign
    duration: tuple  # log-normal (mu, sigma) of seconds
    rtt: tuple  # log-normal (mu, sigma) of seconds
    tcp_prob: float
    dst_ports: tuple  # ((port, weight), ...)
    local_prob: float
    pkts_fwd: tuple  # log-normal (mu, sigma), rounded, >= 1
    pkts_rev: tuple  # log-normal (mu, sigma), rounded, >= 1 when replied
    bytes_fwd: tuple  # log-normal (mu, sigma), rounded, >= 0
    bytes_rev: tuple
    entropy_fwd: tuple  # beta (a, b) scaled to [0, 8]
    entropy_rev: tuple
    mean_gap: float  # exponential inter-flow gap, seconds
    reply_prob: float  # chance the responder sends anything back

    def __post_init__(self):
        if not 0 <= self.tcp_prob <= 1 or not 0 <= self.local_prob <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0 <= self.reply_prob <= 1:
            raise ValueError("reply_prob must lie in [0, 1]")
        if self.mean_gap <= 0:
            raise ValueError("mean_gap must be > 0")
        wsum = sum(w for _, w in self.dst_ports)
        if not self.dst_ports or wsum <= 0:
            raise ValueError("dst_ports needs positive weights")
        for name in ("duration", "rtt", "pkts_fwd", "pkts_rev", "bytes_fwd", "bytes_rev"):
            mu, sigma = getattr(self, name)
            if sigma < 0:
                raise ValueError(f"{name} sigma must be >= 0")
        for name in ("entropy_fwd", "entropy_rev"):
            a, b = getattr(self, name)
            if a <= 0 or b <= 0:
                raise ValueError(f"{name} beta parameters must be > 0")

    @property
    def label(self) -> str:
        return BENIGN_LABEL if self.mal_type is None else self.family

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "mal_type": self.mal_type,
            "duration": list(self.duration),
            "rtt": list(self.rtt),
            "tcp_prob": self.tcp_prob,
            "dst_ports": [[p, w] for p, w in self.dst_ports],
            "local_prob": self.local_prob,
            "pkts_fwd": list(self.pkts_fwd),
            "pkts_rev": list(self.pkts_rev),
            "bytes_fwd": list(self.bytes_fwd),
            "bytes_rev": list(self.bytes_rev),
            "entropy_fwd": list(self.entropy_fwd),
            "entropy_rev": list(self.entropy_rev),
            "mean_gap": self.mean_gap,
            "reply_prob": self.reply_prob,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticProfile":
        return cls(
            family=doc["family"],
            mal_type=doc["mal_type"],
            duration=tuple(doc["duration"]),
            rtt=tuple(doc["rtt"]),
            tcp_prob=doc["tcp_prob"],
            dst_ports=tuple((int(p), float(w)) for p, w in doc["dst_ports"]),
            local_prob=doc["local_prob"],
            pkts_fwd=tuple(doc["pkts_fwd"]),
            pkts_rev=tuple(doc["pkts_rev"]),
            bytes_fwd=tuple(doc["bytes_fwd"]),
            bytes_rev=tuple(doc["bytes_rev"]),
            entropy_fwd=tuple(doc["entropy_fwd"]),
            entropy_rev=tuple(doc["entropy_rev"]),
            mean_gap=doc["mean_gap"],
            reply_prob=doc["reply_prob"],
        )


def generate_flows(
    profile: SyntheticProfile,
    count: int,
    seed: int,
    start_time: float = 0.0,
    host_ip: str = "10.0.0.20",
) -> list[FlowRecord]:
    """Draw `count` labeled flows from the profile, timestamp-ordered with
    exponential inter-flow gaps. Deterministic given the seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    times = start_time + np.cumsum(rng.exponential(profile.mean_gap, count))
    durations = rng.lognormal(*profile.duration, count)
    rtts = rng.lognormal(*profile.rtt, count)
    tcp = rng.random(count) < profile.tcp_prob
    ports = np.array([p for p, _ in profile.dst_ports])
    weights = np.array([w for _, w in profile.dst_ports], dtype=float)
    dports = rng.choice(ports, size=count, p=weights / weights.sum())
    local = rng.random(count) < profile.local_prob
    replied = rng.random(count) < profile.reply_prob
    pf = np.maximum(1, np.rint(rng.lognormal(*profile.pkts_fwd, count))).astype(int)
    pr = np.maximum(1, np.rint(rng.lognormal(*profile.pkts_rev, count))).astype(int)
    bf = np.maximum(0, np.rint(rng.lognormal(*profile.bytes_fwd, count))).astype(int)
    br = np.maximum(0, np.rint(rng.lognormal(*profile.bytes_rev, count))).astype(int)
    ef = 8.0 * rng.beta(*profile.entropy_fwd, count)
    er = 8.0 * rng.beta(*profile.entropy_rev, count)
    sport = rng.integers(49152, 65536, count)
    resp_octets = rng.integers(1, 255, (count, 2))

    flows = []
    label = profile.label
    for i in range(count):
        has_rev = bool(replied[i])
        prev = int(pr[i]) if has_rev else 0
        brev = int(br[i]) if has_rev else 0
        resp_ip = (
            f"192.168.{resp_octets[i, 0]}.{resp_octets[i, 1]}"
            if local[i]
            else f"203.0.{resp_octets[i, 0]}.{resp_octets[i, 1]}"
        )
        flows.append(
            FlowRecord(
                start_time=float(times[i]),
                duration=float(durations[i]),
                rtt=float(min(rtts[i], durations[i])) if has_rev else 0.0,
                protocol=6 if tcp[i] else 17,
                dst_is_local=bool(local[i]),
                dst_port=int(dports[i]),
                pkts_fwd=int(pf[i]),
                bytes_fwd=int(bf[i]),
                pkts_rev=prev,
                bytes_rev=brev,
                entropy_fwd=float(ef[i]) if bf[i] > 0 else 0.0,
                entropy_rev=float(er[i]) if brev > 0 else 0.0,
                label=label,
                key=FlowKey(host_ip, int(sport[i]), resp_ip, int(dports[i]), 6 if tcp[i] else 17),
            )
        )
    return flows


def _ln(x: float) -> float:
    return math.log(x)


# Behavioural archetypes per malware type. Families jitter around these; the
# benign profile is deliberately broad so single flows overlap every type.
_ARCHETYPES = {
    "adware": dict(
        duration=(_ln(0.25), 0.8), rtt=(_ln(0.07), 0.6), tcp_prob=0.97,
        dst_ports=((80, 0.5), (443, 0.42), (8080, 0.08)), local_prob=0.04,
        pkts_fwd=(_ln(4), 0.7), pkts_rev=(_ln(6), 0.7),
        bytes_fwd=(_ln(450), 0.8), bytes_rev=(_ln(5200), 1.1),
        entropy_fwd=(3.4, 2.6), entropy_rev=(4.2, 1.8),
        mean_gap=0.18, reply_prob=0.97,
    ),
    "ransomware": dict(
        duration=(_ln(1.2), 0.9), rtt=(_ln(0.09), 0.7), tcp_prob=0.93,
        dst_ports=((443, 0.58), (445, 0.2), (80, 0.12), (9001, 0.1)), local_prob=0.3,
        pkts_fwd=(_ln(11), 0.9), pkts_rev=(_ln(8), 0.9),
        bytes_fwd=(_ln(5000), 1.3), bytes_rev=(_ln(1800), 1.2),
        entropy_fwd=(6.5, 1.4), entropy_rev=(5.8, 1.6),
        mean_gap=0.5, reply_prob=0.92,
    ),
    "trojan": dict(
        duration=(_ln(0.12), 0.8), rtt=(_ln(0.11), 0.7), tcp_prob=0.88,
        dst_ports=((443, 0.46), (80, 0.3), (53, 0.12), (8080, 0.12)), local_prob=0.08,
        pkts_fwd=(_ln(3), 0.6), pkts_rev=(_ln(3.5), 0.7),
        bytes_fwd=(_ln(260), 0.9), bytes_rev=(_ln(420), 1.1),
        entropy_fwd=(4.6, 1.9), entropy_rev=(4.0, 2.2),
        mean_gap=1.6, reply_prob=0.9,
    ),
    "virus": dict(
        duration=(_ln(2.5), 1.0), rtt=(_ln(0.02), 0.7), tcp_prob=0.9,
        dst_ports=((445, 0.52), (139, 0.26), (80, 0.12), (443, 0.1)), local_prob=0.74,
        pkts_fwd=(_ln(26), 1.0), pkts_rev=(_ln(18), 1.0),
        bytes_fwd=(_ln(26000), 1.3), bytes_rev=(_ln(2600), 1.2),
        entropy_fwd=(2.6, 2.4), entropy_rev=(2.2, 2.8),
        mean_gap=0.7, reply_prob=0.93,
    ),
    "worm": dict(
        duration=(_ln(0.04), 0.7), rtt=(_ln(0.05), 0.8), tcp_prob=0.93,
        dst_ports=((445, 0.4), (80, 0.22), (23, 0.18), (139, 0.12), (3389, 0.08)),
        local_prob=0.5,
        pkts_fwd=(_ln(1.8), 0.5), pkts_rev=(_ln(1.6), 0.6),
        bytes_fwd=(_ln(90), 0.9), bytes_rev=(_ln(160), 1.0),
        entropy_fwd=(1.7, 3.2), entropy_rev=(2.0, 3.0),
        mean_gap=0.06, reply_prob=0.45,
    ),
}

_BENIGN = dict(
    duration=(_ln(0.8), 1.6), rtt=(_ln(0.04), 0.9), tcp_prob=0.84,
    dst_ports=(
        (443, 0.42), (80, 0.2), (53, 0.14), (993, 0.05), (22, 0.04),
        (8080, 0.04), (123, 0.03), (445, 0.03), (25, 0.03), (3389, 0.02),
    ),
    local_prob=0.22,
    pkts_fwd=(_ln(7), 1.1), pkts_rev=(_ln(9), 1.15),
    bytes_fwd=(_ln(900), 1.6), bytes_rev=(_ln(6000), 1.9),
    entropy_fwd=(3.2, 1.9), entropy_rev=(3.6, 1.7),
    mean_gap=0.4, reply_prob=0.93,
)

# Table-style family arrangement: 9/5/15/3/6 known families per type plus six
# quarantined families used only for the unseen-sample experiments.
KNOWN_FAMILIES = {
    "adware": (
        "directdownloader", "downloadguide", "hotbar", "inbox", "installcore",
        "playtech", "softcnapp", "softonic", "techsnab",
    ),
    "ransomware": ("cerber", "deshacop", "sage", "virlock", "wannacry"),
    "trojan": (
        "bublik", "byfh", "cycbot", "delf", "mudrop", "ramnit", "razy",
        "scar", "shiz", "ulise", "unruy", "upatre", "vtflooder", "zbot", "zusy",
    ),
    "virus": ("pioneer", "sality", "viking"),
    "worm": ("allaple", "drolnux", "mydoom", "socks", "warezov", "windef"),
}

UNSEEN_FAMILIES = {
    "autoit": "worm",
    "banload": "trojan",
    "fareit": "trojan",
    "goldun": "ransomware",
    "upantix": "adware",
    "virut": "virus",
}

# upatre drops zbot in the wild, so their traffic is nearly indistinguishable;
# the pair shares one parameter draw with only a whisker of separation
CONFUSABLE_PAIR = ("upatre", "zbot")

# family spread around the type archetype: large enough that families separate
# cleanly at window scale, small enough that types stay coherent
FAMILY_JITTER_SCALE = 1.1
UNSEEN_JITTER_SCALE = 1.2
PAIR_JITTER_SCALE = 0.04


def _jitter_params(base: dict, rng, scale: float) -> dict:
    """Family-level perturbation of an archetype's parameters."""
    out = {}
    for mu_key in ("duration", "rtt", "pkts_fwd", "pkts_rev", "bytes_fwd", "bytes_rev"):
        mu, sigma = base[mu_key]
        out[mu_key] = (
            mu + rng.normal(0.0, scale * max(sigma, 0.3)),
            sigma * float(rng.uniform(1 - 0.3 * scale, 1 + 0.3 * scale)),
        )
    for beta_key in ("entropy_fwd", "entropy_rev"):
        a, b = base[beta_key]
        out[beta_key] = (
            max(0.4, a * float(rng.uniform(1 - 0.45 * scale, 1 + 0.45 * scale))),
            max(0.4, b * float(rng.uniform(1 - 0.45 * scale, 1 + 0.45 * scale))),
        )
    for p_key in ("tcp_prob", "local_prob", "reply_prob"):
        out[p_key] = float(np.clip(base[p_key] + rng.normal(0.0, 0.12 * scale), 0.02, 0.98))
    weights = np.array([w for _, w in base["dst_ports"]])
    weights = weights * rng.uniform(1 - 0.6 * scale, 1 + 0.6 * scale, len(weights))
    weights = weights / weights.sum()
    out["dst_ports"] = tuple(
        (p, float(w)) for (p, _), w in zip(base["dst_ports"], weights)
    )
    out["mean_gap"] = float(base["mean_gap"] * rng.uniform(1 - 0.4 * scale, 1 + 0.4 * scale))
    return out


@dataclass
class Universe:
    """A taxonomy plus every generative profile of the synthetic corpus."""

    taxonomy: MalwareTaxonomy
    benign: SyntheticProfile
    known: dict  # family -> SyntheticProfile
    unseen: dict  # family -> SyntheticProfile
    seed: int = 0

    def profile(self, family: str) -> SyntheticProfile:
        if family == BENIGN_LABEL:
            return self.benign
        return self.known.get(family) or self.unseen[family]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "benign": self.benign.to_dict(),
            "known": [p.to_dict() for p in self.known.values()],
            "unseen": [p.to_dict() for p in self.unseen.values()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Universe":
        known = {p["family"]: SyntheticProfile.from_dict(p) for p in doc["known"]}
        unseen = {p["family"]: SyntheticProfile.from_dict(p) for p in doc["unseen"]}
        fams = {t: [] for t in MALWARE_TYPES}
        for p in known.values():
            fams[p.mal_type].append(p.family)
        taxonomy = MalwareTaxonomy(families_by_type={t: tuple(v) for t, v in fams.items()})
        return cls(
            taxonomy=taxonomy,
            benign=SyntheticProfile.from_dict(doc["benign"]),
            known=known,
            unseen=unseen,
            seed=doc.get("seed", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Universe":
        return cls.from_dict(json.loads(text))


def default_universe(seed: int = 7) -> Universe:
    """The stock 38-known / 6-unseen family universe used by the experiments."""
    rng = np.random.default_rng(seed)
    known = {}
    for mal_type in MALWARE_TYPES:
        base = _ARCHETYPES[mal_type]
        pair_params = None
        for fam in KNOWN_FAMILIES[mal_type]:
            if fam in CONFUSABLE_PAIR:
                if pair_params is None:
                    pair_params = _jitter_params(base, rng, scale=FAMILY_JITTER_SCALE)
                params = _jitter_params(pair_params, rng, scale=PAIR_JITTER_SCALE)
            else:
                params = _jitter_params(base, rng, scale=FAMILY_JITTER_SCALE)
            known[fam] = SyntheticProfile(family=fam, mal_type=mal_type, **params)
    unseen = {
        fam: SyntheticProfile(
            family=fam,
            mal_type=mal_type,
            **_jitter_params(_ARCHETYPES[mal_type], rng, scale=UNSEEN_JITTER_SCALE),
        )
        for fam, mal_type in UNSEEN_FAMILIES.items()
    }
    taxonomy = MalwareTaxonomy(families_by_type={t: KNOWN_FAMILIES[t] for t in MALWARE_TYPES})
    benign = SyntheticProfile(family=BENIGN_LABEL, mal_type=None, **_BENIGN)
    return Universe(taxonomy=taxonomy, benign=benign, known=known, unseen=unseen, seed=seed)


def build_windows(flows_by_family: dict, window_size: int, windows_per_family: int) -> dict:
    """Label-pure windows: consecutive disjoint runs of window_size flows."""
    out = {}
    for fam, flows in flows_by_family.items():
        need = windows_per_family * window_size
        if len(flows) < need:
            raise ValueError(
                f"family {fam!r}: need {need} flows for {windows_per_family} "
                f"windows of {window_size}, have {len(flows)}"
            )
        out[fam] = [
            WindowSample(flows=list(flows[i * window_size : (i + 1) * window_size]), label=fam if flows[0].label != BENIGN_LABEL else BENIGN_LABEL)
            for i in range(windows_per_family)
        ]
    return out


def balance_classes(windows_by_class: dict, cap_per_class: int, seed: int = 0) -> dict:
    """Seeded subsample of any class above the cap; smaller classes pass through."""
    if cap_per_class < 1:
        raise ValueError("cap_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    out = {}
    for cls_name in windows_by_class:
        windows = windows_by_class[cls_name]
        if len(windows) > cap_per_class:
            keep = rng.choice(len(windows), size=cap_per_class, replace=False)
            out[cls_name] = [windows[i] for i in sorted(keep)]
        else:
            out[cls_name] = list(windows)
    return out


def benign_sequence(pool, length: int, rng) -> list:
    """Length-matched benign flow sequence, drawn with replacement."""
    if not pool:
        raise ValueError("benign pool is empty")
    return [pool[int(i)] for i in rng.integers(0, len(pool), length)]


EVAL_RATIOS_BINARY = (0.2, 0.4, 0.8, 1.0, 2.0, 4.0, 8.0)
EVAL_RATIOS_MULTI = (0.2, 0.4, 0.8, 1.0, 2.0)


def build_noisy_eval_set(
    malicious_windows,
    ratios,
    test_pool,
    seed: int = 0,
    benign_windows=None,
) -> dict:
    """ratio -> {"malicious": [...], "benign": [...]} evaluation samples.

    Every malicious window gets one benign-injection realization from the
    test pool; benign samples are length-matched pool sequences so the
    classifier cannot key on sample length. Ratio 0 returns the clean sets.
    """
    benign_windows = benign_windows or []
    out = {}
    for ratio in sorted(set(float(r) for r in ratios)):
        if ratio == 0.0:
            out[ratio] = {
                "malicious": list(malicious_windows),
                "benign": list(benign_windows),
            }
            continue
        # seeded by the ratio value alone, so a ratio's realization does not
        # depend on which grid it was requested in
        rng = np.random.default_rng((seed, int(ratio * 1000)))
        mal = []
        for w in malicious_windows:
            noisy = make_noisy(
                w, NoiseSpec(ratio=ratio, benign_pool=test_pool, rng_seed=int(rng.integers(2**63)))
            )
            mal.append(WindowSample(flows=noisy, label=w.label))
        n_benign = len(benign_windows) if benign_windows else len(malicious_windows)
        ben = []
        if malicious_windows:
            length = len(mal[0].flows)
            for _ in range(n_benign):
                ben.append(
                    WindowSample(flows=benign_sequence(test_pool, length, rng), label=BENIGN_LABEL)
                )
        out[ratio] = {"malicious": mal, "benign": ben}
    return out


@dataclass
class SplitSpec:
    """Train/test arrangement with disjoint benign noise pools and a
    quarantined unseen-family list."""

    train_fraction: float = 0.8
    test_fraction: float = 0.2
    seed: int = 0
    unseen_families: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if abs(self.train_fraction + self.test_fraction - 1.0) > 1e-9:
            raise ValueError("train and test fractions must sum to 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def quarantine_violations(train_windows, unseen_families) -> list:
    """Flows from quarantined families found in training material."""
    unseen = set(unseen_families)
    bad = []
    for w in train_windows:
        for f in w.flows:
            if f.label in unseen:
                bad.append((w.label, f.label))
    return bad
