"""Per-frame authenticated protection with strict replay defense.

Two profiles:

* ``performance_aead``: AES-GCM-128 over the packed RAW10 bytes, nonce =
  nonce_salt (4 bytes BE) || sequence (8 bytes BE), 16-byte tag.
* ``efficiency_integrity_only``: body travels in clear, tag =
  AES-CMAC(mac_key, aad_header || body).

The associated-data header binds session id, sequence, profile and frame
geometry, so swapping dimensions or splicing a frame from another session
breaks the tag.

Serialized layout (all integers big endian)::

    aad_header (25) = session_id u64 | sequence u64 | profile u8 | width u32 | height u32
    body_len u64 | body | tag (16)
    [line_count u32 | line_tags (16 * line_count)]   # per-packet carriage only
"""

from __future__ import annotations

import collections
import dataclasses
import enum
import hmac
import struct

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import cmac
from cryptography.hazmat.primitives.ciphers import algorithms
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import FrameRejected, MalformedError, ProtocolError
from .sensor import BayerOrder, RawFrame, frame_from_packed
from .session import SessionKeys

TAG_LEN = 16
AAD_FMT = ">QQBII"
AAD_LEN = struct.calcsize(AAD_FMT)

# Incremented on every protect/unprotect; lets tests confirm bench and
# capture share one code path.
CALL_COUNTS: collections.Counter = collections.Counter()


class CipherProfile(enum.IntEnum):
    efficiency_integrity_only = 0
    performance_aead = 1

    @property
    def cipher_name(self) -> str:
        return "AES-GCM-128" if self is CipherProfile.performance_aead else "AES-CMAC-128"


class TagCarriage(str, enum.Enum):
    per_frame = "per_frame"
    per_packet = "per_packet"


def nonce_for(salt: int, sequence: int) -> bytes:
    return struct.pack(">IQ", salt, sequence)


def aad_header(session_id, sequence, profile, width, height) -> bytes:
    return struct.pack(AAD_FMT, session_id, sequence, int(profile), width, height)


def aes_cmac(key: bytes, *chunks) -> bytes:
    c = cmac.CMAC(algorithms.AES(key))
    for chunk in chunks:
        c.update(chunk)
    return c.finalize()


def line_tag(keys: SessionKeys, aad: bytes, index: int, line: bytes) -> bytes:
    """Per-packet tag over one transmitted line packet payload."""
    return aes_cmac(keys.mac_key, b"SEP", aad, struct.pack(">I", index), line)


def _line_tags(keys: SessionKeys, aad: bytes, lines) -> list[bytes]:
    """``line_tag`` for every line; the keyed CMAC state is built once and copied."""
    base = cmac.CMAC(algorithms.AES(keys.mac_key))
    base.update(b"SEP" + aad)
    out = []
    for i, line in enumerate(lines):
        c = base.copy()
        c.update(struct.pack(">I", i))
        c.update(line)
        out.append(c.finalize())
    return out


@dataclasses.dataclass(frozen=True)
class ProtectedFrame:
    session_id: int
    sequence: int
    profile: CipherProfile
    width: int
    height: int
    body: bytes
    tag: bytes
    line_tags: tuple[bytes, ...] = ()
    bayer_order: BayerOrder = dataclasses.field(default=BayerOrder.RGGB, compare=False)

    @property
    def aad_header(self) -> bytes:
        return aad_header(self.session_id, self.sequence, self.profile, self.width, self.height)

    def lines(self) -> list[bytes]:
        n = self.width * 10 // 8
        return [self.body[i * n:(i + 1) * n] for i in range(self.height)]

    def serialize(self) -> bytes:
        out = [self.aad_header, struct.pack(">Q", len(self.body)), self.body, self.tag]
        if self.line_tags:
            out.append(struct.pack(">I", len(self.line_tags)))
            out.extend(self.line_tags)
        return b"".join(out)

    @classmethod
    def parse(cls, data: bytes, bayer_order=BayerOrder.RGGB) -> "ProtectedFrame":
        if len(data) < AAD_LEN + 8 + TAG_LEN:
            raise MalformedError("protected frame truncated")
        session_id, seq, profile, width, height = struct.unpack_from(AAD_FMT, data)
        try:
            profile = CipherProfile(profile)
        except ValueError:
            raise MalformedError(f"unknown profile {profile}") from None
        (n,) = struct.unpack_from(">Q", data, AAD_LEN)
        pos = AAD_LEN + 8
        if len(data) < pos + n + TAG_LEN:
            raise MalformedError("protected frame body truncated")
        body = bytes(data[pos:pos + n])
        pos += n
        tag = bytes(data[pos:pos + TAG_LEN])
        pos += TAG_LEN
        line_tags: tuple[bytes, ...] = ()
        if pos < len(data):
            if len(data) < pos + 4:
                raise MalformedError("line-tag trailer truncated")
            (count,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if len(data) != pos + count * TAG_LEN:
                raise MalformedError("line-tag trailer length mismatch")
            line_tags = tuple(bytes(data[pos + i * TAG_LEN:pos + (i + 1) * TAG_LEN])
                              for i in range(count))
        return cls(session_id, seq, profile, width, height, body, tag, line_tags, bayer_order)


@dataclasses.dataclass
class SendState:
    """Sender-side counter discipline: each sequence is used at most once."""

    last_sent: int | None = None


@dataclasses.dataclass
class ReplayState:
    """Receiver-side highest accepted sequence; ``None`` until the first frame."""

    highest_accepted: int | None = None

    def fresh(self, sequence: int) -> bool:
        return self.highest_accepted is None or sequence > self.highest_accepted


def protect(frame: RawFrame, keys: SessionKeys, profile=CipherProfile.performance_aead,
            sender: SendState | None = None, carriage=TagCarriage.per_frame) -> ProtectedFrame:
    profile = CipherProfile(profile)
    seq = frame.frame_counter
    if sender is not None:
        if sender.last_sent is not None and seq <= sender.last_sent:
            raise ProtocolError(f"frame counter {seq} reused (last sent {sender.last_sent})")
        sender.last_sent = seq
    CALL_COUNTS["protect"] += 1
    plain = frame.packed()
    aad = aad_header(keys.session_id, seq, profile, frame.width, frame.height)
    if profile is CipherProfile.performance_aead:
        sealed = AESGCM(keys.aead_key).encrypt(nonce_for(keys.nonce_salt, seq), plain, aad)
        body, tag = sealed[:-TAG_LEN], sealed[-TAG_LEN:]
    else:
        body, tag = plain, aes_cmac(keys.mac_key, aad, plain)
    pf = ProtectedFrame(keys.session_id, seq, profile, frame.width, frame.height, body, tag,
                        bayer_order=frame.bayer_order)
    if TagCarriage(carriage) is TagCarriage.per_packet:
        pf = dataclasses.replace(
            pf, line_tags=tuple(_line_tags(keys, aad, pf.lines()))
        )
    return pf


def verify_tag(pf: ProtectedFrame, keys: SessionKeys) -> bytes | None:
    """Return the plaintext body if every tag verifies, else None."""
    aad = pf.aad_header
    if len(pf.tag) != TAG_LEN:
        return None
    if pf.line_tags:
        if len(pf.line_tags) != pf.height:
            return None
        expected = _line_tags(keys, aad, pf.lines())
        if not all(hmac.compare_digest(e, t) for e, t in zip(expected, pf.line_tags)):
            return None
    if pf.profile is CipherProfile.performance_aead:
        try:
            return AESGCM(keys.aead_key).decrypt(
                nonce_for(keys.nonce_salt, pf.sequence), pf.body + pf.tag, aad
            )
        except InvalidTag:
            return None
    if not hmac.compare_digest(aes_cmac(keys.mac_key, aad, pf.body), pf.tag):
        return None
    return pf.body


def unprotect(pf: ProtectedFrame, keys: SessionKeys, replay: ReplayState) -> RawFrame:
    """Verify, then enforce strict monotonicity; raises FrameRejected.

    The replay state only advances after the tag has verified.
    """
    CALL_COUNTS["unprotect"] += 1
    if pf.session_id != keys.session_id:
        raise FrameRejected("session_mismatch", pf.sequence)
    plain = verify_tag(pf, keys)
    if plain is None or len(plain) != pf.width * pf.height * 10 // 8:
        raise FrameRejected("tag_mismatch", pf.sequence)
    if not replay.fresh(pf.sequence):
        raise FrameRejected("replay_rejected", pf.sequence)
    frame = frame_from_packed(plain, pf.width, pf.height, pf.sequence, pf.bayer_order)
    replay.highest_accepted = pf.sequence
    return frame
