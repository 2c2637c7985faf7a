"""Provenance manifests and the SRA1 signed-asset container.

The manifest is C2PA-shaped (claim generator, ordered assertions, hard
binding, signature, certificate chain) but uses its own canonical binary
encoding. All integers are big endian.

Canonical (signed) bytes::

    "SRAM" | version u8 | claim_generator str32 | timestamp u64
    | assertion_count u32 | { kind u8 | entry_count u32 | { key str32 | value } }

    value  = 0x01 u64 | 0x02 str32 | 0x03 u32-length bytes
    str32  = u32 length | utf-8

Manifest section::

    u32 len | canonical | u32 len | signature (r||s) | u32 len | certificate chain

SRA1 container::

    "SRA1" | u64 image_len | image payload | u64 manifest_len | manifest section

Image payload::

    "RGB8" | width u32 | height u32 | width*height*3 bytes, row-major RGB

The signature covers only the canonical bytes; the certificate chain is
validated on its own against the trust root.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct

import numpy as np

from .errors import MalformedError, ManifestRefused
from .protection import CipherProfile
from .session import (
    DeviceCertificate,
    decode_chain,
    encode_chain,
    verify_chain,
    verify_prehashed,
)

MANIFEST_MAGIC = b"SRAM"
MANIFEST_VERSION = 1
ASSET_MAGIC = b"SRA1"
IMAGE_MAGIC = b"RGB8"
CLAIM_GENERATOR = "sra-reference/0.1"
FIRMWARE_VERSION = "sra-enclave-sim 0.1.0"
ENCLAVE_MARKER = "simulated-enclave"


class AssertionKind(enum.IntEnum):
    hard_binding = 0
    device_identity = 1
    secure_pipeline = 2
    frame_counter = 3
    firmware_info = 4
    capture_time = 5


REQUIRED_KINDS = tuple(AssertionKind)


@dataclasses.dataclass(frozen=True)
class Assertion:
    kind: AssertionKind
    body: tuple[tuple[str, int | str | bytes], ...]

    def get(self, key, default=None):
        for k, v in self.body:
            if k == key:
                return v
        return default

    def as_dict(self) -> dict:
        return dict(self.body)


@dataclasses.dataclass(frozen=True)
class Manifest:
    assertions: tuple[Assertion, ...]
    claim_generator: str
    timestamp: int
    signature: bytes = b""
    certificate_chain: tuple[DeviceCertificate, ...] = ()

    def assertion(self, kind: AssertionKind) -> Assertion | None:
        for a in self.assertions:
            if a.kind == kind:
                return a
        return None

    def canonical_bytes(self) -> bytes:
        return canonical_serialize(self)

    def signing_digest(self) -> bytes:
        return hashlib.sha256(self.canonical_bytes()).digest()

    def encode(self) -> bytes:
        canon = self.canonical_bytes()
        chain = encode_chain(self.certificate_chain)
        return b"".join([
            struct.pack(">I", len(canon)), canon,
            struct.pack(">I", len(self.signature)), self.signature,
            struct.pack(">I", len(chain)), chain,
        ])

    @classmethod
    def decode(cls, data: bytes) -> "Manifest":
        r = _Cursor(data)
        canon = r.take(r.u32())
        sig = r.take(r.u32())
        chain = decode_chain(r.take(r.u32()))
        r.done()
        unsigned = parse_canonical(canon)
        return dataclasses.replace(unsigned, signature=sig, certificate_chain=chain)


# -- canonical encoding ----------------------------------------------------------

def _str32(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">I", len(raw)) + raw


def _value(v) -> bytes:
    if isinstance(v, bool):
        raise TypeError("booleans are not canonical values; use int or str")
    if isinstance(v, int):
        if not 0 <= v < 2**64:
            raise ValueError(f"integer {v} does not fit in u64")
        return b"\x01" + struct.pack(">Q", v)
    if isinstance(v, str):
        return b"\x02" + _str32(v)
    if isinstance(v, (bytes, bytearray)):
        return b"\x03" + struct.pack(">I", len(v)) + bytes(v)
    raise TypeError(f"unsupported canonical value type {type(v).__name__}")


def canonical_serialize(manifest: Manifest) -> bytes:
    """Bytes covered by the signature; signature and chain are excluded."""
    out = [MANIFEST_MAGIC, bytes([MANIFEST_VERSION]), _str32(manifest.claim_generator),
           struct.pack(">QI", manifest.timestamp, len(manifest.assertions))]
    for a in manifest.assertions:
        out.append(struct.pack(">BI", int(a.kind), len(a.body)))
        for key, value in a.body:
            out.append(_str32(key))
            out.append(_value(value))
    return b"".join(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedError("truncated manifest")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def str32(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError("invalid utf-8 in manifest") from exc

    def value(self):
        tag = self.u8()
        if tag == 1:
            return self.u64()
        if tag == 2:
            return self.str32()
        if tag == 3:
            return self.take(self.u32())
        raise MalformedError(f"unknown value tag {tag:#04x}")

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedError("trailing bytes in manifest")


def parse_canonical(data: bytes) -> Manifest:
    r = _Cursor(data)
    if r.take(4) != MANIFEST_MAGIC:
        raise MalformedError("bad manifest magic")
    if r.u8() != MANIFEST_VERSION:
        raise MalformedError("unsupported manifest version")
    generator = r.str32()
    timestamp = r.u64()
    assertions = []
    for _ in range(r.u32()):
        try:
            kind = AssertionKind(r.u8())
        except ValueError as exc:
            raise MalformedError("unknown assertion kind") from exc
        body = tuple((r.str32(), r.value()) for _ in range(r.u32()))
        assertions.append(Assertion(kind, body))
    r.done()
    return Manifest(tuple(assertions), generator, timestamp)


# -- image payload & container ---------------------------------------------------

def encode_image_payload(width: int, height: int, rgb) -> bytes:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.shape != (height, width, 3):
        raise ValueError(f"RGB array shape {rgb.shape} != ({height}, {width}, 3)")
    return IMAGE_MAGIC + struct.pack(">II", width, height) + rgb.tobytes()


def decode_image_payload(payload: bytes) -> np.ndarray:
    if len(payload) < 12 or payload[:4] != IMAGE_MAGIC:
        raise MalformedError("bad image payload header")
    width, height = struct.unpack_from(">II", payload, 4)
    if len(payload) != 12 + width * height * 3:
        raise MalformedError("image payload length does not match its header")
    return np.frombuffer(payload, dtype=np.uint8, offset=12).reshape(height, width, 3)


@dataclasses.dataclass(frozen=True)
class SignedAsset:
    image_payload: bytes
    manifest: Manifest | None

    def encode(self) -> bytes:
        manifest = self.manifest.encode() if self.manifest is not None else b""
        return b"".join([ASSET_MAGIC, struct.pack(">Q", len(self.image_payload)),
                         self.image_payload, struct.pack(">Q", len(manifest)), manifest])

    @classmethod
    def decode(cls, data: bytes) -> "SignedAsset":
        r = _Cursor(data)
        if r.take(4) != ASSET_MAGIC:
            raise MalformedError("not an SRA1 container")
        image = r.take(r.u64())
        manifest_bytes = r.take(r.u64())
        r.done()
        manifest = Manifest.decode(manifest_bytes) if manifest_bytes else None
        return cls(image, manifest)

    def image(self) -> np.ndarray:
        return decode_image_payload(self.image_payload)


# -- building --------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class CaptureContext:
    session_id: int
    sequence: int
    profile: CipherProfile
    device_cert_chain: tuple[DeviceCertificate, ...]
    auth_status: str
    time: int
    sensor_id: str = ""


def build_manifest(image_payload: bytes, context: CaptureContext) -> Manifest:
    """Unsigned manifest with the six assertions in fixed order."""
    if context.auth_status != "succeeded":
        raise ManifestRefused(f"refusing to build a manifest for auth status "
                              f"{context.auth_status!r}")
    leaf = context.device_cert_chain[0]
    A, K = Assertion, AssertionKind
    assertions = (
        A(K.hard_binding, (("alg", "sha256"),
                           ("hash", hashlib.sha256(image_payload).digest()))),
        A(K.device_identity, (("signer", leaf.subject_id),
                              ("issuer", leaf.issuer_id),
                              ("root", context.device_cert_chain[-1].subject_id),
                              ("sensor", context.sensor_id))),
        A(K.secure_pipeline, (("statement", "captured via secure pipeline"),
                              ("cipher", CipherProfile(context.profile).cipher_name),
                              ("authentication", "Succeeded"),
                              ("session_id", context.session_id))),
        A(K.frame_counter, (("value", context.sequence),)),
        A(K.firmware_info, (("firmware", FIRMWARE_VERSION),
                            ("environment", ENCLAVE_MARKER))),
        A(K.capture_time, (("seconds", context.time),
                           ("source", "enclave-clock"))),
    )
    return Manifest(assertions, CLAIM_GENERATOR, context.time,
                    certificate_chain=tuple(context.device_cert_chain))


# -- verification ----------------------------------------------------------------

CHECKS = ("container", "certificate_chain", "signature", "hard_binding", "assertions")


@dataclasses.dataclass(frozen=True)
class Verdict:
    valid: bool
    reasons: tuple[str, ...]
    checks: dict
    malformed: bool = False

    @property
    def exit_code(self) -> int:
        if self.valid:
            return 0
        return 2 if self.malformed else 1

    def report(self) -> str:
        lines = [f"verdict={'valid' if self.valid else 'invalid'}"]
        for name in CHECKS:
            state = self.checks.get(name)
            lines.append(f"check.{name}=" + ("skip" if state is None else
                                              "pass" if state else "fail"))
        lines.append("reasons=" + ",".join(self.reasons))
        return "\n".join(lines) + "\n"


def verify_asset(asset, trust_root: DeviceCertificate) -> Verdict:
    """Run every check and report all failures, not only the first."""
    if not isinstance(asset, SignedAsset):
        try:
            asset = SignedAsset.decode(asset)
        except MalformedError:
            return Verdict(False, ("malformed",), {"container": False}, malformed=True)
    checks = {"container": True}
    reasons: list[str] = []
    m = asset.manifest
    if m is None:
        checks.update(dict.fromkeys(CHECKS[1:], False))
        return Verdict(False, ("manifest_missing",), checks)

    chain_ok = verify_chain(m.certificate_chain, trust_root).valid
    checks["certificate_chain"] = chain_ok
    if not chain_ok:
        reasons.append("untrusted_chain")

    sig_ok = bool(m.certificate_chain) and verify_prehashed(
        m.certificate_chain[0].public_key, m.signing_digest(), m.signature)
    checks["signature"] = sig_ok
    if not sig_ok:
        reasons.append("bad_signature")

    hb = m.assertion(AssertionKind.hard_binding)
    digest = hashlib.sha256(asset.image_payload).digest()
    binding_ok = hb is not None and hb.get("alg") == "sha256" and hb.get("hash") == digest
    checks["hard_binding"] = binding_ok
    if not binding_ok:
        reasons.append("hard_binding_mismatch")

    present = [a.kind for a in m.assertions]
    missing = [k.name for k in REQUIRED_KINDS if present.count(k) != 1]
    checks["assertions"] = not missing
    if missing:
        reasons.append("missing_assertion:" + "+".join(missing))

    return Verdict(not reasons, tuple(reasons), checks)
