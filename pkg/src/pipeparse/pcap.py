"""Minimal libpcap file reader and writer (Ethernet link type only)."""
from __future__ import annotations

import struct
from pathlib import Path

LINKTYPE_ETHERNET = 1
_MAGIC_US = 0xA1B2C3D4
_MAGIC_NS = 0xA1B23C4D


class PcapError(ValueError):
    pass


def read_pcap(path: str | Path) -> list[bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise PcapError(f"{path}: too short for a pcap header")
    for endian in "<>":
        magic = struct.unpack(endian + "I", raw[:4])[0]
        if magic in (_MAGIC_US, _MAGIC_NS):
            break
    else:
        raise PcapError(f"{path}: not a pcap file")
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", raw[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise PcapError(f"{path}: link type {linktype} is not Ethernet")
    packets, pos = [], 24
    while pos < len(raw):
        if pos + 16 > len(raw):
            raise PcapError(f"{path}: truncated record header at byte {pos}")
        _, _, incl, _ = struct.unpack(endian + "IIII", raw[pos:pos + 16])
        pos += 16
        if pos + incl > len(raw):
            raise PcapError(f"{path}: truncated record at byte {pos}")
        packets.append(raw[pos:pos + incl])
        pos += incl
    return packets


def write_pcap(path: str | Path, packets: list[bytes], snaplen: int = 65535) -> None:
    out = [struct.pack("<IHHiIII", _MAGIC_US, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    for i, p in enumerate(packets):
        out.append(struct.pack("<IIII", i, 0, len(p), len(p)))
        out.append(p)
    Path(path).write_bytes(b"".join(out))
