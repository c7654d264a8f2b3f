"""Bidirectional flow metering with idle/active timeouts and payload entropy.

Packets are grouped on a canonical 5-tuple; the endpoint that sent the first
packet of a flow is its initiator and defines the forward direction. A flow
closes when its key goes quiet for longer than the idle timeout, when its age
exceeds the active timeout (the boundary packet starts the next record), or
at end of input.
"""

import ipaddress
import math
from dataclasses import dataclass

import numpy as np

from .pcap import PacketRecord

_LOCAL_NETS = tuple(
    ipaddress.ip_network(n)
    for n in ("10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16", "127.0.0.0/8")
)


@dataclass(frozen=True)
class FlowKey:
    """Directed 5-tuple; initiator is whoever sent the flow's first packet."""

    initiator_ip: str
    initiator_port: int
    responder_ip: str
    responder_port: int
    protocol: int

    def undirected(self):
        a = (self.initiator_ip, self.initiator_port)
        b = (self.responder_ip, self.responder_port)
        return (min(a, b), max(a, b), self.protocol)


@dataclass
class MeterConfig:
    idle_timeout: float = 30.0
    active_timeout: float = 300.0
    max_payload: int = 2048

    def __post_init__(self):
        if self.idle_timeout <= 0:
            raise ValueError("idle_timeout must be > 0")
        if self.active_timeout < self.idle_timeout:
            raise ValueError("active_timeout must be >= idle_timeout")
        if self.max_payload <= 0:
            raise ValueError("max_payload must be > 0")


@dataclass
class FlowRecord:
    """One bidirectional flow. Byte counters sum transport payload bytes only,
    so a flow of empty-payload packets legitimately has bytes == 0."""

    start_time: float
    duration: float
    rtt: float
    protocol: int
    dst_is_local: bool
    dst_port: int
    pkts_fwd: int
    bytes_fwd: int
    pkts_rev: int
    bytes_rev: int
    entropy_fwd: float
    entropy_rev: float
    label: str | None = None
    key: FlowKey | None = None

    def validate(self):
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.pkts_fwd < 1:
            raise ValueError("a flow needs at least one forward packet")
        for c in (self.bytes_fwd, self.pkts_rev, self.bytes_rev):
            if c < 0:
                raise ValueError("counters must be >= 0")
        for e in (self.entropy_fwd, self.entropy_rev):
            if not 0.0 <= e <= 8.0:
                raise ValueError("entropy must lie in [0, 8]")
        return self


def is_local_destination(ip: str) -> bool:
    """True for RFC1918 and loopback space."""
    addr = ipaddress.ip_address(ip)
    return any(addr in net for net in _LOCAL_NETS)


def payload_entropy(payload: bytes, max_payload: int = 2048) -> float:
    """Shannon entropy (bits/byte) of the byte histogram over the first
    max_payload bytes. Empty input gives 0."""
    buf = payload[:max_payload]
    if not buf:
        return 0.0
    counts = np.bincount(np.frombuffer(buf, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(buf)
    return float(-(p * np.log2(p)).sum())


def estimate_rtt(flow_packets: list[PacketRecord]) -> float:
    """Round-trip estimate for one flow's time-ordered packets.

    TCP: first responder SYN-ACK minus first initiator SYN when both exist.
    Fallback (and non-TCP): first reverse packet minus first forward packet.
    0 when unmeasurable; clamped at 0.
    """
    if not flow_packets:
        return 0.0
    first = flow_packets[0]
    initiator = (first.src_ip, first.src_port)
    syn_ts = synack_ts = None
    first_fwd_ts = first_rev_ts = None
    for pkt in flow_packets:
        fwd = (pkt.src_ip, pkt.src_port) == initiator
        if fwd and first_fwd_ts is None:
            first_fwd_ts = pkt.timestamp
        if not fwd and first_rev_ts is None:
            first_rev_ts = pkt.timestamp
        if pkt.protocol == 6 and pkt.tcp_flags:
            if fwd and syn_ts is None and "SYN" in pkt.tcp_flags:
                syn_ts = pkt.timestamp
            if not fwd and synack_ts is None and {"SYN", "ACK"} <= pkt.tcp_flags:
                synack_ts = pkt.timestamp
    if syn_ts is not None and synack_ts is not None:
        return max(0.0, synack_ts - syn_ts)
    if first_rev_ts is not None and first_fwd_ts is not None:
        return max(0.0, first_rev_ts - first_fwd_ts)
    return 0.0


class _OpenFlow:
    __slots__ = ("key", "start", "last", "packets", "seq")

    def __init__(self, key: FlowKey, seq: int, pkt: PacketRecord):
        self.key = key
        self.seq = seq
        self.start = pkt.timestamp
        self.last = pkt.timestamp
        self.packets = [pkt]


def _finalize(flow: _OpenFlow, config: MeterConfig) -> FlowRecord:
    key = flow.key
    initiator = (key.initiator_ip, key.initiator_port)
    pf = pr = bf = br = 0
    buf_fwd = bytearray()
    buf_rev = bytearray()
    for pkt in flow.packets:
        if (pkt.src_ip, pkt.src_port) == initiator:
            pf += 1
            bf += len(pkt.payload)
            if len(buf_fwd) < config.max_payload:
                buf_fwd += pkt.payload[: config.max_payload - len(buf_fwd)]
        else:
            pr += 1
            br += len(pkt.payload)
            if len(buf_rev) < config.max_payload:
                buf_rev += pkt.payload[: config.max_payload - len(buf_rev)]
    return FlowRecord(
        start_time=flow.start,
        duration=flow.last - flow.start,
        rtt=estimate_rtt(flow.packets),
        protocol=key.protocol,
        dst_is_local=is_local_destination(key.responder_ip),
        dst_port=key.responder_port,
        pkts_fwd=pf,
        bytes_fwd=bf,
        pkts_rev=pr,
        bytes_rev=br,
        entropy_fwd=payload_entropy(bytes(buf_fwd), config.max_payload),
        entropy_rev=payload_entropy(bytes(buf_rev), config.max_payload),
        key=key,
    ).validate()


def assemble_flows(
    packets: list[PacketRecord], config: MeterConfig | None = None
) -> list[FlowRecord]:
    """Aggregate time-ordered packets into FlowRecords.

    Emission order is by flow start time, ties broken by the order flows were
    first seen. Decreasing timestamps raise, naming the offending index.
    """
    config = config or MeterConfig()
    open_flows: dict[tuple, _OpenFlow] = {}
    done: list[_OpenFlow] = []
    last_ts = -math.inf
    seq = 0
    for i, pkt in enumerate(packets):
        if pkt.timestamp < last_ts:
            raise ValueError(
                f"packet {i} at t={pkt.timestamp} arrives before t={last_ts}; "
                "input must be time-ordered"
            )
        last_ts = pkt.timestamp
        ukey = (
            min((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port)),
            max((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port)),
            pkt.protocol,
        )
        flow = open_flows.get(ukey)
        if flow is not None:
            if (pkt.timestamp - flow.last > config.idle_timeout) or (
                pkt.timestamp - flow.start > config.active_timeout
            ):
                done.append(open_flows.pop(ukey))
                flow = None
        if flow is None:
            key = FlowKey(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port, pkt.protocol)
            open_flows[ukey] = _OpenFlow(key, seq, pkt)
            seq += 1
        else:
            flow.packets.append(pkt)
            flow.last = pkt.timestamp
    done.extend(open_flows.values())
    done.sort(key=lambda f: (f.start, f.seq))
    return [_finalize(f, config) for f in done]


CSV_HEADER = (
    "start_time,duration,rtt,protocol,dst_is_local,dst_port,"
    "pkts_fwd,bytes_fwd,pkts_rev,bytes_rev,entropy_fwd,entropy_rev,label"
)


def flow_to_csv_row(flow: FlowRecord) -> str:
    # repr() round-trips doubles exactly, which covers the >= 6 significant
    # digit requirement and keeps reruns byte-identical
    return ",".join(
        [
            repr(float(flow.start_time)),
            repr(float(flow.duration)),
            repr(float(flow.rtt)),
            str(flow.protocol),
            "1" if flow.dst_is_local else "0",
            str(flow.dst_port),
            str(flow.pkts_fwd),
            str(flow.bytes_fwd),
            str(flow.pkts_rev),
            str(flow.bytes_rev),
            repr(float(flow.entropy_fwd)),
            repr(float(flow.entropy_rev)),
            flow.label or "",
        ]
    )


def write_flow_csv(flows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for flow in flows:
            fh.write(flow_to_csv_row(flow) + "\n")


def read_flow_csv(path) -> list[FlowRecord]:
    flows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected flow CSV header: {header!r}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            f = line.split(",")
            if len(f) != 13:
                raise ValueError(f"bad flow row (expected 13 fields): {line!r}")
            flows.append(
                FlowRecord(
                    start_time=float(f[0]),
                    duration=float(f[1]),
                    rtt=float(f[2]),
                    protocol=int(f[3]),
                    dst_is_local=f[4] == "1",
                    dst_port=int(f[5]),
                    pkts_fwd=int(f[6]),
                    bytes_fwd=int(f[7]),
                    pkts_rev=int(f[8]),
                    bytes_rev=int(f[9]),
                    entropy_fwd=float(f[10]),
                    entropy_rev=float(f[11]),
                    label=f[12] or None,
                )
            )
    return flows
