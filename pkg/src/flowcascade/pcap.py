"""Classic pcap parsing: Ethernet/IPv4 frames to transport-level packet records."""

import logging
import struct
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800

TCP_FIN = "FIN"
TCP_SYN = "SYN"
TCP_RST = "RST"
TCP_ACK = "ACK"

_FLAG_BITS = ((0x01, TCP_FIN), (0x02, TCP_SYN), (0x04, TCP_RST), (0x10, TCP_ACK))


class CaptureError(Exception):
    """Raised when the capture file cannot be parsed at all."""


@dataclass(frozen=True)
class PacketRecord:
    """One captured IPv4 packet, reduced to what flow metering needs."""

    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    payload: bytes
    tcp_flags: frozenset | None = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        for p in (self.src_port, self.dst_port):
            if not 0 <= p <= 65535:
                raise ValueError(f"port {p} out of range")
        if (self.tcp_flags is not None) != (self.protocol == 6):
            raise ValueError("tcp_flags must be present exactly for TCP packets")


@dataclass
class CaptureStats:
    """Bookkeeping from one parse_capture run."""

    packets: int = 0
    skipped: int = 0
    truncated: bool = False
    notes: list = field(default_factory=list)


def _ipv4_str(raw: bytes) -> str:
    return f"{raw[0]}.{raw[1]}.{raw[2]}.{raw[3]}"


def parse_capture(data: bytes) -> tuple[list[PacketRecord], CaptureStats]:
    """Parse a classic pcap byte string into PacketRecords.

    Only Ethernet/IPv4 frames are yielded; everything else is skipped and
    counted. A truncated trailing record stops parsing with a warning and
    returns what was read so far. Returns (packets, stats); stats carries
    the skip count the flow conservation checks need.
    """
    if len(data) < 24:
        raise CaptureError("capture shorter than the 24-byte global header")
    magic = struct.unpack("<I", data[:4])[0]
    if magic == PCAP_MAGIC:
        endian = "<"
    elif struct.unpack(">I", data[:4])[0] == PCAP_MAGIC:
        endian = ">"
    else:
        raise CaptureError(f"bad pcap magic 0x{magic:08x}")
    _, _, _, _, _, network = struct.unpack(endian + "HHiIII", data[4:24])
    if network != LINKTYPE_ETHERNET:
        raise CaptureError(f"unsupported link type {network}, need Ethernet (1)")

    packets: list[PacketRecord] = []
    stats = CaptureStats()
    off = 24
    rec_hdr = struct.Struct(endian + "IIII")
    while off < len(data):
        if off + 16 > len(data):
            stats.truncated = True
            log.warning("truncated packet record header at offset %d; stopping", off)
            break
        ts_sec, ts_usec, incl_len, _orig_len = rec_hdr.unpack_from(data, off)
        off += 16
        if off + incl_len > len(data):
            stats.truncated = True
            log.warning("truncated packet data at offset %d; stopping", off)
            break
        frame = data[off : off + incl_len]
        off += incl_len
        pkt = _decode_frame(ts_sec + ts_usec * 1e-6, frame)
        if pkt is None:
            stats.skipped += 1
        else:
            packets.append(pkt)
            stats.packets += 1
    return packets, stats


def parse_capture_file(path) -> tuple[list[PacketRecord], CaptureStats]:
    with open(path, "rb") as fh:
        return parse_capture(fh.read())


def _decode_frame(ts: float, frame: bytes) -> PacketRecord | None:
    """Ethernet frame -> PacketRecord, or None when it is not plain IPv4."""
    if len(frame) < 14 + 20:
        return None
    ethertype = struct.unpack(">H", frame[12:14])[0]
    if ethertype != ETHERTYPE_IPV4:
        return None
    ip = frame[14:]
    ver_ihl = ip[0]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        return None
    total_len = struct.unpack(">H", ip[2:4])[0]
    proto = ip[9]
    src_ip = _ipv4_str(ip[12:16])
    dst_ip = _ipv4_str(ip[16:20])
    # honor the IP datagram length but never read past the captured bytes
    body = ip[ihl : min(total_len, len(ip))]

    src_port = dst_port = 0
    payload = b""
    flags = None
    if proto == 6:
        if len(body) < 20:
            return None
        src_port, dst_port = struct.unpack(">HH", body[:4])
        data_off = (body[12] >> 4) * 4
        if data_off < 20 or data_off > len(body):
            return None
        raw_flags = body[13]
        flags = frozenset(name for bit, name in _FLAG_BITS if raw_flags & bit)
        payload = body[data_off:]
    elif proto == 17:
        if len(body) < 8:
            return None
        src_port, dst_port = struct.unpack(">HH", body[:4])
        payload = body[8:]
    # other IP protocols carry no transport payload for our purposes
    return PacketRecord(
        timestamp=ts,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        protocol=proto,
        payload=bytes(payload),
        tcp_flags=flags,
    )
