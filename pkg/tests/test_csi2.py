import os
import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import crc16_bitwise, csi2_long
from sra.csi2 import (
    DT_RAW10,
    DT_TAG,
    ChecksumError,
    Csi2Packet,
    TagEnvelope,
    TagKind,
    decode_packet,
    dump_hex,
    encapsulate_tag,
    encode_stream,
    extract_tag,
    iter_packets,
    load_hex,
    payload_crc,
    reassemble,
    split_frame,
)
from sra.errors import DimensionError, EncodingError, MalformedError, MalformedTagError
from sra.sensor import RawFrame, generate_frame

VECTORS = Path(__file__).parent / "vectors"


# -- CRC against the bit-serial oracle ---------------------------------------------

def test_crc_catalogue_check_value():
    assert crc16_bitwise(b"123456789") == 0x29B1
    assert payload_crc(b"123456789") == 0x29B1


def test_crc_empty_payload_is_init():
    assert crc16_bitwise(b"") == payload_crc(b"") == 0xFFFF


def test_crc_single_zero_byte_matches_oracle():
    assert payload_crc(b"\x00") == crc16_bitwise(b"\x00")


@settings(max_examples=300)
@given(st.binary(max_size=300))
def test_crc_matches_oracle(data):
    assert payload_crc(data) == crc16_bitwise(data)


def test_single_bit_corruption_changes_crc():
    rng = random.Random(1)
    for _ in range(2000):
        payload = bytearray(rng.randbytes(rng.randint(1, 2400)))
        good = payload_crc(payload)
        bit = rng.randrange(len(payload) * 8)
        payload[bit // 8] ^= 1 << (bit % 8)
        assert payload_crc(payload) != good


def test_corrupted_packet_fails_crc_on_decode():
    pkt = Csi2Packet.long(DT_RAW10, bytes(range(40)))
    raw = bytearray(pkt.encode())
    raw[10] ^= 0x04
    decoded, _ = decode_packet(bytes(raw))
    assert not decoded.crc_ok


# -- framing -----------------------------------------------------------------------

def test_default_resolution_split():
    frame = generate_frame(0, 1920, 1232, 1)
    packets = split_frame(frame)
    assert len(packets) == 1232 + 2
    assert packets[0].data_type == 0x00 and packets[-1].data_type == 0x01
    lines = packets[1:-1]
    assert {p.data_type for p in lines} == {DT_RAW10}
    assert {len(p.payload) for p in lines} == {2400}
    assert b"".join(p.payload for p in lines) == frame.packed()


def test_four_by_one_zero_frame():
    frame = RawFrame(4, 1, np.zeros((1, 4), dtype=np.uint16), 0)
    packets = split_frame(frame)
    assert len(packets) == 3
    assert packets[1].payload == bytes(5)
    assert packets[1].header.word_count == 5


def test_width_not_multiple_of_four_is_rejected():
    frame = RawFrame(6, 2, np.zeros((2, 6), dtype=np.uint16), 0)
    with pytest.raises(DimensionError):
        split_frame(frame)


def test_split_reassemble_round_trip():
    frame = generate_frame(7, 64, 48, 9)
    back = reassemble(split_frame(frame))
    assert back.data == frame.packed()
    assert (back.width, back.height, back.frame_number) == (64, 48, 9)


def test_reassemble_through_wire_bytes():
    frame = generate_frame(8, 32, 6, 2)
    stream = encode_stream(split_frame(frame, vc=2))
    packets = list(iter_packets(stream))
    assert all(p.header.virtual_channel == 2 for p in packets)
    assert reassemble(packets).data == frame.packed()


def test_tag_transparency():
    frame = generate_frame(3, 16, 4, 4)
    plain = split_frame(frame)
    env = TagEnvelope(TagKind.per_packet_sep, 4, os.urandom(16))
    tagged = [plain[0]]
    for pkt in plain[1:-1]:
        tagged += [pkt, encapsulate_tag(env)]
    tagged.append(plain[-1])
    a, b = reassemble(plain), reassemble(tagged)
    assert a.data == b.data
    assert len(b.tags) == 4 and [i for i, _ in b.tags] == [0, 1, 2, 3]


def test_reassemble_raises_on_bad_crc():
    packets = split_frame(generate_frame(1, 8, 2, 1))
    bad = Csi2Packet(packets[1].header, packets[1].payload, packets[1].checksum ^ 1)
    with pytest.raises(ChecksumError):
        reassemble([packets[0], bad] + packets[2:])


def test_reassemble_requires_frame_markers():
    packets = split_frame(generate_frame(1, 8, 2, 1))
    with pytest.raises(MalformedError):
        reassemble(packets[1:])
    with pytest.raises(MalformedError):
        reassemble(packets[:-1])


def test_word_count_is_payload_length():
    for n in (0, 1, 5, 2400):
        assert Csi2Packet.long(DT_RAW10, bytes(n)).header.word_count == n


# -- tag envelopes -------------------------------------------------------------------

def test_all_zero_envelope_layout():
    pkt = encapsulate_tag(TagEnvelope(TagKind.per_packet_sep, 0, bytes(16)))
    assert pkt.data_type == DT_TAG == 0x24
    assert pkt.header.word_count == 26
    assert pkt.payload == bytes([0x0B, 0x00]) + bytes(24)


def test_envelope_sequence_is_big_endian():
    pkt = encapsulate_tag(TagEnvelope(TagKind.per_frame_fsed, 1, bytes(16)))
    assert pkt.payload[1] == 1
    assert pkt.payload[2:10] == bytes([0, 0, 0, 0, 0, 0, 0, 1])


@given(st.sampled_from(list(TagKind)), st.integers(0, 2**64 - 1), st.binary(min_size=16, max_size=16))
def test_envelope_round_trip(kind, seq, tag):
    env = TagEnvelope(kind, seq, tag)
    assert extract_tag(encapsulate_tag(env)) == env
    raw = encapsulate_tag(env).encode()
    assert extract_tag(decode_packet(raw)[0]) == env


def test_wrong_tag_length_is_encoding_error():
    with pytest.raises(EncodingError):
        encapsulate_tag(TagEnvelope(TagKind.per_frame_fsed, 1, bytes(15)))


def test_image_packet_is_not_a_tag():
    assert extract_tag(Csi2Packet.long(DT_RAW10, b"\x0b" + bytes(25))) is None


def test_tag_type_without_marker_is_malformed():
    with pytest.raises(MalformedTagError):
        extract_tag(Csi2Packet.long(DT_TAG, b"\xff" + bytes(25)))


def test_user_defined_types_are_not_tag_carriers():
    for dt in range(0x30, 0x38):
        assert extract_tag(Csi2Packet.long(dt, b"\x0b\x01" + bytes(24))) is None


# -- golden files ---------------------------------------------------------------------

def test_golden_frame_dump():
    samples = np.array([(i * 37 + 5) % 1024 for i in range(16)], dtype=np.uint16)
    frame = RawFrame(8, 2, samples.reshape(2, 8), 3)
    assert dump_hex(split_frame(frame)) == (VECTORS / "frame_8x2.hex").read_text()
    assert reassemble(load_hex((VECTORS / "frame_8x2.hex").read_text())).data == frame.packed()


def test_golden_tag_packet():
    env = TagEnvelope(TagKind.per_frame_fsed, 1, bytes(range(0xA0, 0xB0)))
    assert dump_hex([encapsulate_tag(env)]) == (VECTORS / "tag_fsed_seq1.hex").read_text()


def test_long_packet_matches_oracle_encoding():
    rng = random.Random(5)
    for _ in range(50):
        payload = rng.randbytes(rng.randint(0, 100))
        vc = rng.randrange(4)
        assert Csi2Packet.long(DT_RAW10, payload, vc).encode() == csi2_long(vc, DT_RAW10, payload)
