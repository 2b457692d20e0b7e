"""Classic libpcap capture files (link type Ethernet), nanosecond or microsecond."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Union

from ..parser import RawFrame

LINKTYPE_ETHERNET = 1
MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
SNAPLEN = 262_144


class PcapError(ValueError):
    pass


def write_pcap(path: Union[str, Path], frames: Iterable[RawFrame], nanosecond: bool = True) -> int:
    """Write frames; returns the number of records written."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", MAGIC_NSEC if nanosecond else MAGIC_USEC, 2, 4, 0, 0, SNAPLEN,
                             LINKTYPE_ETHERNET))
        for frame in frames:
            _write_record(fh, frame, nanosecond)
            count += 1
    return count


def _write_record(fh: BinaryIO, frame: RawFrame, nanosecond: bool) -> None:
    sec, rem = divmod(frame.capture_ts_ns, 1_000_000_000)
    frac = rem if nanosecond else rem // 1000
    n = len(frame.data)
    fh.write(struct.pack("<IIII", sec, frac, n, n))
    fh.write(frame.data)


def read_pcap(path: Union[str, Path]) -> Iterator[RawFrame]:
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) < 24:
            raise PcapError(f"{path}: truncated global header")
        magic_le = struct.unpack("<I", header[:4])[0]
        if magic_le in (MAGIC_USEC, MAGIC_NSEC):
            endian = "<"
            magic = magic_le
        else:
            magic = struct.unpack(">I", header[:4])[0]
            if magic not in (MAGIC_USEC, MAGIC_NSEC):
                raise PcapError(f"{path}: not a pcap file (magic {header[:4].hex()})")
            endian = ">"
        linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
        if linktype != LINKTYPE_ETHERNET:
            raise PcapError(f"{path}: unsupported link type {linktype}")
        scale = 1 if magic == MAGIC_NSEC else 1000
        rec = struct.Struct(endian + "IIII")
        while True:
            head = fh.read(16)
            if not head:
                return
            if len(head) < 16:
                raise PcapError(f"{path}: truncated record header")
            sec, frac, incl, _orig = rec.unpack(head)
            data = fh.read(incl)
            if len(data) < incl:
                raise PcapError(f"{path}: truncated record body")
            yield RawFrame(data, sec * 1_000_000_000 + frac * scale)
