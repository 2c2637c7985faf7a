"""Simulated MIPI CSI-2 packet layer.

Wire layout of one packet::

    byte 0      virtual channel (2 bits) << 6 | data type (6 bits)
    bytes 1..2  word count, little endian (frame number for short packets)
    byte 3      reserved, always 0x00
    payload     word_count bytes              (long packets only)
    crc         CRC-16/CCITT-FALSE, LE 16-bit (long packets only)

Header ECC from real CSI-2 is not modelled. Security tags ride in long
packets of data type 0x24 whose payload starts with the marker byte 0x0B.
"""

from __future__ import annotations

import binascii
import dataclasses
import enum
import struct
from typing import Iterable, Iterator

from .errors import DimensionError, EncodingError, MalformedError, MalformedTagError
from .sensor import RawFrame, check_packing

DT_FRAME_START = 0x00
DT_FRAME_END = 0x01
DT_RAW10 = 0x2B
# RGB888 is unused by a RAW10 stream, so the receiver can claim it for tags.
DT_TAG = 0x24
SHORT_PACKET_TYPES = range(0x00, 0x10)

TAG_MARKER = 0x0B
TAG_LEN = 16
ENVELOPE_LEN = 26
HEADER_LEN = 4
CRC_LEN = 2


class TagKind(enum.IntEnum):
    per_packet_sep = 0
    per_frame_fsed = 1


class ChecksumError(MalformedError):
    """Payload CRC does not match the transmitted checksum."""


def payload_crc(payload) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, unreflected, no final XOR."""
    # binascii.crc_hqx is exactly the unreflected 0x1021 CRC with a caller-supplied init.
    return binascii.crc_hqx(bytes(payload), 0xFFFF)


@dataclasses.dataclass(frozen=True)
class PacketHeader:
    virtual_channel: int
    data_type: int
    word_count: int

    def __post_init__(self):
        if not 0 <= self.virtual_channel <= 3:
            raise EncodingError(f"virtual channel {self.virtual_channel} out of range 0-3")
        if not 0 <= self.data_type <= 0x3F:
            raise EncodingError(f"data type {self.data_type:#x} out of range")
        if not 0 <= self.word_count <= 0xFFFF:
            raise EncodingError(f"word count {self.word_count} out of range")

    @property
    def is_short(self) -> bool:
        return self.data_type in SHORT_PACKET_TYPES

    def encode(self) -> bytes:
        return struct.pack("<BHB", (self.virtual_channel << 6) | self.data_type, self.word_count, 0)


@dataclasses.dataclass(frozen=True)
class Csi2Packet:
    header: PacketHeader
    payload: bytes = b""
    checksum: int | None = None

    @classmethod
    def long(cls, data_type: int, payload: bytes, vc: int = 0) -> "Csi2Packet":
        payload = bytes(payload)
        return cls(PacketHeader(vc, data_type, len(payload)), payload, payload_crc(payload))

    @classmethod
    def short(cls, data_type: int, frame_number: int, vc: int = 0) -> "Csi2Packet":
        return cls(PacketHeader(vc, data_type, frame_number & 0xFFFF))

    @property
    def data_type(self) -> int:
        return self.header.data_type

    @property
    def crc_ok(self) -> bool:
        if self.header.is_short:
            return not self.payload
        return (
            self.header.word_count == len(self.payload)
            and self.checksum == payload_crc(self.payload)
        )

    def encode(self) -> bytes:
        if self.header.is_short:
            if self.payload:
                raise EncodingError("short packets carry no payload")
            return self.header.encode()
        if self.header.word_count != len(self.payload):
            raise EncodingError("word_count does not match payload length")
        return self.header.encode() + self.payload + struct.pack("<H", self.checksum)


def decode_packet(data: bytes, offset: int = 0) -> tuple[Csi2Packet, int]:
    """Decode one packet at ``offset``; returns the packet and the next offset."""
    if len(data) - offset < HEADER_LEN:
        raise MalformedError("truncated packet header")
    b0, wc, reserved = struct.unpack_from("<BHB", data, offset)
    if reserved:
        raise MalformedError(f"reserved header byte is {reserved:#04x}, expected 0x00")
    header = PacketHeader(b0 >> 6, b0 & 0x3F, wc)
    offset += HEADER_LEN
    if header.is_short:
        return Csi2Packet(header), offset
    end = offset + wc
    if len(data) < end + CRC_LEN:
        raise MalformedError("truncated long packet")
    payload = bytes(data[offset:end])
    (crc,) = struct.unpack_from("<H", data, end)
    return Csi2Packet(header, payload, crc), end + CRC_LEN


def iter_packets(stream: bytes) -> Iterator[Csi2Packet]:
    offset = 0
    while offset < len(stream):
        pkt, offset = decode_packet(stream, offset)
        yield pkt


def encode_stream(packets: Iterable[Csi2Packet]) -> bytes:
    return b"".join(p.encode() for p in packets)


# -- image framing -------------------------------------------------------------

def split_payload(data: bytes, width: int, height: int, frame_number: int, vc: int = 0):
    """Frame ``data`` (packed RAW10-sized bytes) into FS, one packet per line, FE."""
    check_packing(width, height)
    line_len = width * 10 // 8
    if len(data) != line_len * height:
        raise DimensionError(f"{len(data)} bytes do not fill {height} lines of {line_len}")
    packets = [Csi2Packet.short(DT_FRAME_START, frame_number, vc)]
    mv = memoryview(data)
    for row in range(height):
        packets.append(Csi2Packet.long(DT_RAW10, mv[row * line_len:(row + 1) * line_len], vc))
    packets.append(Csi2Packet.short(DT_FRAME_END, frame_number, vc))
    return packets


def split_frame(frame: RawFrame, vc: int = 0) -> list[Csi2Packet]:
    return split_payload(frame.packed(), frame.width, frame.height, frame.frame_counter, vc)


@dataclasses.dataclass(frozen=True)
class Reassembled:
    data: bytes
    width: int
    height: int
    frame_number: int
    lines: tuple[bytes, ...]
    # (index of the preceding line packet, envelope); -1 when before any line
    tags: tuple[tuple[int, "TagEnvelope"], ...]


def reassemble(packets: Iterable[Csi2Packet]) -> Reassembled:
    """Rebuild one frame from FS ... FE; tag envelopes are collected, not merged."""
    packets = list(packets)
    if len(packets) < 2 or packets[0].data_type != DT_FRAME_START:
        raise MalformedError("frame does not begin with a frame-start packet")
    if packets[-1].data_type != DT_FRAME_END:
        raise MalformedError("frame does not end with a frame-end packet")
    frame_number = packets[0].header.word_count
    if packets[-1].header.word_count != frame_number:
        raise MalformedError("frame-start and frame-end numbers differ")
    lines, tags = [], []
    for pkt in packets[1:-1]:
        if pkt.header.is_short:
            raise MalformedError(f"unexpected short packet {pkt.data_type:#04x} inside frame")
        if not pkt.crc_ok:
            raise ChecksumError(f"payload CRC mismatch in packet {len(lines) + len(tags) + 1}")
        env = extract_tag(pkt)
        if env is not None:
            tags.append((len(lines) - 1, env))
        elif pkt.data_type == DT_RAW10:
            lines.append(pkt.payload)
        else:
            raise MalformedError(f"unexpected data type {pkt.data_type:#04x}")
    if not lines:
        raise MalformedError("frame carries no image lines")
    line_len = len(lines[0])
    if any(len(line) != line_len for line in lines):
        raise MalformedError("image lines have inconsistent lengths")
    if line_len % 5:
        raise MalformedError(f"line length {line_len} is not RAW10 aligned")
    return Reassembled(
        b"".join(lines), line_len * 8 // 10, len(lines), frame_number, tuple(lines), tuple(tags)
    )


# -- tag carriage --------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class TagEnvelope:
    tag_kind: TagKind
    sequence: int
    tag_bytes: bytes
    marker: int = TAG_MARKER

    def encode(self) -> bytes:
        if self.marker != TAG_MARKER:
            raise EncodingError(f"tag marker must be {TAG_MARKER:#04x}")
        if len(self.tag_bytes) != TAG_LEN:
            raise EncodingError(f"tag must be {TAG_LEN} bytes, got {len(self.tag_bytes)}")
        if not 0 <= self.sequence < 2**64:
            raise EncodingError("sequence must fit in 64 bits")
        return struct.pack(">BBQ", self.marker, int(self.tag_kind), self.sequence) + bytes(
            self.tag_bytes
        )


def encapsulate_tag(envelope: TagEnvelope, vc: int = 0) -> Csi2Packet:
    return Csi2Packet.long(DT_TAG, envelope.encode(), vc)


def extract_tag(packet: Csi2Packet) -> TagEnvelope | None:
    """Return the envelope, or None for packets that are not tag carriers."""
    if packet.data_type != DT_TAG:
        return None
    payload = packet.payload
    if not payload or payload[0] != TAG_MARKER:
        raise MalformedTagError("0x24 packet without the 0x0B tag marker")
    if len(payload) != ENVELOPE_LEN:
        raise MalformedTagError(f"tag envelope is {len(payload)} bytes, expected {ENVELOPE_LEN}")
    marker, kind, seq = struct.unpack_from(">BBQ", payload)
    try:
        kind = TagKind(kind)
    except ValueError:
        raise MalformedTagError(f"unknown tag kind {kind}") from None
    return TagEnvelope(kind, seq, bytes(payload[10:]), marker)


# -- golden dumps ----------------------------------------------------------------

def dump_hex(packets: Iterable[Csi2Packet]) -> str:
    """One encoded packet per line, lowercase hex."""
    return "".join(p.encode().hex() + "\n" for p in packets)


def load_hex(text: str) -> list[Csi2Packet]:
    packets = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        raw = bytes.fromhex(line)
        pkt, end = decode_packet(raw)
        if end != len(raw):
            raise MalformedError("trailing bytes after packet in hex dump")
        packets.append(pkt)
    return packets
