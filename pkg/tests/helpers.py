"""Shared test oracles: hand-built pcap bytes, a brute-force reference flow
aggregator, and random packet-trace generation.

The reference aggregator deliberately shares no code with the streaming
meter: it partitions packets by undirected key, splits each group on the
timeout rules by scanning timestamps, and computes every field with plain
Python (Counter-based entropy, manual RFC1918 checks).
"""

import math
import struct
from collections import Counter

import numpy as np

from flowcascade.classify import MalwareTaxonomy
from flowcascade.meter import FlowKey, FlowRecord
from flowcascade.pcap import PacketRecord
from flowcascade.synth import Universe, default_universe

_TCP_FLAG_BITS = {"FIN": 0x01, "SYN": 0x02, "RST": 0x04, "ACK": 0x10}


def _ip_bytes(ip):
    return bytes(int(o) for o in ip.split("."))


def build_frame(src, dst, sport, dport, proto, payload=b"", flags=()):
    """Ethernet + IPv4 + TCP/UDP frame bytes."""
    if proto == 6:
        flag_byte = 0
        for f in flags:
            flag_byte |= _TCP_FLAG_BITS[f]
        transport = struct.pack(
            ">HHIIBBHHH", sport, dport, 0, 0, 5 << 4, flag_byte, 8192, 0, 0
        ) + payload
    elif proto == 17:
        transport = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload
    else:
        transport = payload
    total_len = 20 + len(transport)
    ip = struct.pack(
        ">BBHHHBBH4s4s",
        0x45, 0, total_len, 0, 0, 64, proto, 0, _ip_bytes(src), _ip_bytes(dst),
    ) + transport
    eth = b"\xaa" * 6 + b"\xbb" * 6 + struct.pack(">H", 0x0800)
    return eth + ip


def build_pcap(packets, big_endian=False, linktype=1):
    """Classic pcap bytes from (ts, frame_bytes) pairs."""
    e = ">" if big_endian else "<"
    out = struct.pack(e + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, linktype)
    for ts, frame in packets:
        sec = int(ts)
        usec = int(round((ts - sec) * 1e6))
        out += struct.pack(e + "IIII", sec, usec, len(frame), len(frame)) + frame
    return out


def pcap_with(packet_specs, **kw):
    """Convenience: (ts, src, dst, sport, dport, proto, payload, flags) tuples."""
    frames = []
    for spec in packet_specs:
        ts, src, dst, sport, dport, proto, payload, flags = spec
        frames.append((ts, build_frame(src, dst, sport, dport, proto, payload, flags)))
    return build_pcap(frames, **kw)


def tiny_universe(seed=11):
    """One family per type plus one unseen family; keeps CLI tests quick."""
    full = default_universe(seed=seed)
    keep = {
        "hotbar": "adware",
        "cerber": "ransomware",
        "delf": "trojan",
        "sality": "virus",
        "allaple": "worm",
    }
    taxonomy = MalwareTaxonomy(
        families_by_type={t: (fam,) for fam, t in keep.items()}
    )
    return Universe(
        taxonomy=taxonomy,
        benign=full.benign,
        known={fam: full.known[fam] for fam in keep},
        unseen={"virut": full.unseen["virut"]},
        seed=seed,
    )


TINY_TRAIN_CONFIG = {
    "ratios_binary": [0.0, 1.0],
    "ratios_multi": [0.0, 1.0],
    "dae_hidden": [32],
    "dae_epochs": 2,
    "clf_hidden": [16],
    "clf_epochs": 3,
}


# ---------------------------------------------------------------------------
# brute-force reference aggregator


def _ref_local(ip):
    o = [int(x) for x in ip.split(".")]
    if o[0] in (10, 127):
        return True
    if o[0] == 172 and 16 <= o[1] <= 31:
        return True
    if o[0] == 192 and o[1] == 168:
        return True
    return False


def _ref_entropy(buf):
    if not buf:
        return 0.0
    counts = Counter(buf)
    total = len(buf)
    return -sum((c / total) * math.log2(c / total) for c in counts.values())


def _ref_rtt(pkts):
    initiator = (pkts[0].src_ip, pkts[0].src_port)
    syn = synack = first_fwd = first_rev = None
    for p in pkts:
        fwd = (p.src_ip, p.src_port) == initiator
        if fwd and first_fwd is None:
            first_fwd = p.timestamp
        if not fwd and first_rev is None:
            first_rev = p.timestamp
        if p.protocol == 6 and p.tcp_flags:
            if fwd and syn is None and "SYN" in p.tcp_flags:
                syn = p.timestamp
            if not fwd and synack is None and "SYN" in p.tcp_flags and "ACK" in p.tcp_flags:
                synack = p.timestamp
    if syn is not None and synack is not None:
        return max(0.0, synack - syn)
    if first_rev is not None and first_fwd is not None:
        return max(0.0, first_rev - first_fwd)
    return 0.0


def reference_flows(packets, config):
    """Independent reimplementation of the metering contract."""
    groups = {}
    for idx, p in enumerate(packets):
        a = (p.src_ip, p.src_port)
        b = (p.dst_ip, p.dst_port)
        k = (min(a, b), max(a, b), p.protocol)
        groups.setdefault(k, []).append((idx, p))

    segments = []
    for plist in groups.values():
        current = [plist[0]]
        for idx, p in plist[1:]:
            last_ts = current[-1][1].timestamp
            start_ts = current[0][1].timestamp
            if (p.timestamp - last_ts > config.idle_timeout) or (
                p.timestamp - start_ts > config.active_timeout
            ):
                segments.append(current)
                current = []
            current.append((idx, p))
        segments.append(current)

    segments.sort(key=lambda seg: (seg[0][1].timestamp, seg[0][0]))
    records = []
    for seg in segments:
        pkts = [p for _, p in seg]
        first = pkts[0]
        initiator = (first.src_ip, first.src_port)
        fwd = [p for p in pkts if (p.src_ip, p.src_port) == initiator]
        rev = [p for p in pkts if (p.src_ip, p.src_port) != initiator]
        buf_fwd = b"".join(p.payload for p in fwd)[: config.max_payload]
        buf_rev = b"".join(p.payload for p in rev)[: config.max_payload]
        responder = (first.dst_ip, first.dst_port)
        records.append(
            FlowRecord(
                start_time=first.timestamp,
                duration=pkts[-1].timestamp - first.timestamp,
                rtt=_ref_rtt(pkts),
                protocol=first.protocol,
                dst_is_local=_ref_local(responder[0]),
                dst_port=responder[1],
                pkts_fwd=len(fwd),
                bytes_fwd=sum(len(p.payload) for p in fwd),
                pkts_rev=len(rev),
                bytes_rev=sum(len(p.payload) for p in rev),
                entropy_fwd=_ref_entropy(buf_fwd),
                entropy_rev=_ref_entropy(buf_rev),
                key=FlowKey(initiator[0], initiator[1], responder[0], responder[1], first.protocol),
            )
        )
    return records


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_grads(net, x, y, step=1e-5):
    """Central differences over every parameter of a (small) network."""
    from flowcascade.nn import loss_value

    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + step
            up = loss_value(net.loss, np.atleast_2d(net.forward(x)), np.atleast_2d(y))
            p[idx] = orig - step
            down = loss_value(net.loss, np.atleast_2d(net.forward(x)), np.atleast_2d(y))
            p[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def random_gradcheck_net(rng):
    """Small random net covering every activation/loss pairing; inputs are
    redrawn when any pre-activation sits close to a relu/selu kink, where
    finite differences are meaningless."""
    from flowcascade.nn import Network

    losses = ["mean-squared-error", "categorical-cross-entropy", "binary-cross-entropy"]
    hiddens = ["relu", "selu", "sigmoid"]
    loss = losses[int(rng.integers(0, len(losses)))]
    n_layers = int(rng.integers(1, 4))
    sizes = [int(rng.integers(2, 9)) for _ in range(n_layers + 1)]
    acts = [hiddens[int(rng.integers(0, len(hiddens)))] for _ in range(n_layers - 1)]
    if loss == "categorical-cross-entropy":
        acts.append("softmax")
    elif loss == "binary-cross-entropy":
        acts.append("sigmoid")
    else:
        acts.append(["identity", "softmax", "sigmoid"][int(rng.integers(0, 3))])
    net = Network.create(sizes, acts, loss, seed=int(rng.integers(0, 2**31)))

    for _ in range(50):
        x = rng.normal(0, 1.5, sizes[0])
        _, (zs, _) = net.forward_cached(x)
        if min(np.abs(z).min() for z in zs) > 1e-3:
            break
    if loss == "categorical-cross-entropy":
        y = np.zeros(sizes[-1])
        y[int(rng.integers(0, sizes[-1]))] = 1.0
    elif loss == "binary-cross-entropy":
        y = rng.integers(0, 2, sizes[-1]).astype(float)
    else:
        y = rng.normal(0, 1, sizes[-1])
    return net, x, y


def gradcheck_relative_error(net, x, y):
    from flowcascade.nn import backward

    _, grads = backward(net, x, y)
    fd = finite_difference_grads(net, x, y)
    num = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(grads, fd)))
    den = max(
        np.sqrt(sum(np.sum(a**2) for a in grads)),
        np.sqrt(sum(np.sum(b**2) for b in fd)),
        1e-8,
    )
    return num / den


def assert_flows_match(got, expected):
    assert len(got) == len(expected), f"{len(got)} flows != {len(expected)} expected"
    for i, (g, e) in enumerate(zip(got, expected)):
        ctx = f"flow {i}"
        assert g.key == e.key, ctx
        assert g.start_time == e.start_time, ctx
        assert g.duration == e.duration, ctx
        assert g.rtt == e.rtt, ctx
        assert g.protocol == e.protocol, ctx
        assert g.dst_is_local == e.dst_is_local, ctx
        assert g.dst_port == e.dst_port, ctx
        assert (g.pkts_fwd, g.bytes_fwd, g.pkts_rev, g.bytes_rev) == (
            e.pkts_fwd, e.bytes_fwd, e.pkts_rev, e.bytes_rev,
        ), ctx
        # entropy is computed by two different summation orders
        assert abs(g.entropy_fwd - e.entropy_fwd) < 1e-12, ctx
        assert abs(g.entropy_rev - e.entropy_rev) < 1e-12, ctx


def random_packets(rng, n, idle_timeout=30.0):
    """Random but time-ordered trace over a small key space, with gaps sized
    to exercise both timeout rules and plenty of bidirectional traffic."""
    hosts = ["10.0.0.1", "10.0.0.2", "192.168.1.9", "8.8.8.8", "172.20.0.7", "203.0.113.5"]
    ports = [80, 443, 53, 1234, 40000]
    t = float(rng.uniform(0, 5))
    conversations = []
    packets = []
    for _ in range(n):
        jump = rng.random()
        if jump < 0.02:
            t += float(rng.uniform(idle_timeout, idle_timeout * 12))
        elif jump < 0.1:
            t += float(rng.uniform(idle_timeout * 0.8, idle_timeout * 1.2))
        else:
            t += float(rng.exponential(1.5))
        if conversations and rng.random() < 0.6:
            src, sport, dst, dport, proto = conversations[int(rng.integers(0, len(conversations)))]
            if rng.random() < 0.5:
                src, sport, dst, dport = dst, dport, src, sport
        else:
            src, dst = rng.choice(hosts, 2, replace=False)
            sport, dport = (int(rng.choice(ports)), int(rng.choice(ports)))
            proto = int(rng.choice([6, 17, 1], p=[0.6, 0.3, 0.1]))
            conversations.append((src, sport, dst, dport, proto))
            if len(conversations) > 12:
                conversations.pop(0)
        payload = bytes(rng.integers(0, 256, int(rng.integers(0, 12))).astype(np.uint8))
        flags = None
        if proto == 6:
            flags = set()
            roll = rng.random()
            if roll < 0.25:
                flags.add("SYN")
                if roll < 0.1:
                    flags.add("ACK")
            elif roll < 0.8:
                flags.add("ACK")
            flags = frozenset(flags)
        if proto not in (6, 17):
            sport = dport = 0
            payload = b""
        packets.append(
            PacketRecord(
                timestamp=t,
                src_ip=str(src),
                dst_ip=str(dst),
                src_port=sport,
                dst_port=dport,
                protocol=proto,
                payload=payload,
                tcp_flags=flags,
            )
        )
    return packets
