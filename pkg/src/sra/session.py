"""Mutual authentication and session-key establishment.

The message flow is a minimal SPDM-shaped subset, with the host as
initiator::

    host                                  sensor
    GET_VERSION          ------------->
                         <-------------   VERSION
    CERTIFICATE (host)   ------------->
                         <-------------   CERTIFICATE (sensor)
    CHALLENGE            ------------->
                         <-------------   CHALLENGE_AUTH, CHALLENGE
    CHALLENGE_AUTH,
    KEY_EXCHANGE         ------------->
                         <-------------   KEY_EXCHANGE_RSP
    FINISH               ------------->
                         <-------------   FINISH_RSP

Both endpoints hash every message they send or receive into a running
transcript. Challenge signatures, the key-exchange signature and the FINISH
MACs are all computed over that transcript, so a single altered byte on the
wire surfaces as a verification failure on the other side.

Certificates use a small length-prefixed binary record rather than X.509.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import hmac
import logging
import os
import struct
from collections import deque
from pathlib import Path
from typing import Callable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, utils
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand

from .errors import HandshakeError, MalformedError, SRAError

log = logging.getLogger(__name__)

CURVE = ec.SECP256R1()
CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
SIG_LEN = 64
PUBKEY_LEN = 65
SUPPORTED_VERSIONS = (0x11,)


# -- ECDSA helpers -------------------------------------------------------------

def public_bytes(key) -> bytes:
    if isinstance(key, ec.EllipticCurvePrivateKey):
        key = key.public_key()
    return key.public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
    )


def load_public(data: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, bytes(data))
    except ValueError as exc:
        raise MalformedError(f"invalid P-256 point: {exc}") from exc


def sign_prehashed(key: ec.EllipticCurvePrivateKey, digest: bytes, deterministic=False) -> bytes:
    """ECDSA-P256 over a SHA-256 digest, encoded as fixed-width r || s."""
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    der = key.sign(
        digest, ec.ECDSA(utils.Prehashed(hashes.SHA256()), deterministic_signing=deterministic)
    )
    r, s = utils.decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify_prehashed(public_key, digest: bytes, signature: bytes) -> bool:
    if len(signature) != SIG_LEN or len(digest) != 32:
        return False
    if isinstance(public_key, (bytes, bytearray)):
        try:
            public_key = load_public(public_key)
        except MalformedError:
            return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    if not (0 < r < CURVE_ORDER and 0 < s < CURVE_ORDER):
        return False
    try:
        public_key.verify(
            utils.encode_dss_signature(r, s), digest, ec.ECDSA(utils.Prehashed(hashes.SHA256()))
        )
    except InvalidSignature:
        return False
    return True


def private_scalar(key: ec.EllipticCurvePrivateKey) -> bytes:
    return key.private_numbers().private_value.to_bytes(32, "big")


def key_from_scalar(scalar: bytes) -> ec.EllipticCurvePrivateKey:
    value = int.from_bytes(scalar, "big")
    if not 0 < value < CURVE_ORDER:
        raise MalformedError("private scalar out of range")
    return ec.derive_private_key(value, CURVE)


def key_from_rng(rng: Callable[[int], bytes]) -> ec.EllipticCurvePrivateKey:
    return ec.derive_private_key(int.from_bytes(rng(40), "big") % (CURVE_ORDER - 1) + 1, CURVE)


# -- certificates --------------------------------------------------------------

class Role(enum.IntEnum):
    manufacturer_root = 0
    device_class = 1
    sensor = 2
    host = 3


ISSUING_ROLES = {Role.manufacturer_root, Role.device_class}


def _put_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


class _Reader:
    """Strict cursor over a byte string; every read is bounds-checked."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedError("truncated record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str16(self) -> str:
        (n,) = self.unpack(">H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError("invalid utf-8 string") from exc

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedError(f"{len(self.data) - self.pos} trailing bytes")


@dataclasses.dataclass(frozen=True)
class DeviceCertificate:
    subject_id: str
    role: Role
    public_key: bytes
    issuer_id: str
    signature: bytes = b""

    def body(self) -> bytes:
        return (
            b"SRAC"
            + _put_str(self.subject_id)
            + bytes([int(self.role)])
            + struct.pack(">H", len(self.public_key))
            + self.public_key
            + _put_str(self.issuer_id)
        )

    def encode(self) -> bytes:
        return self.body() + struct.pack(">H", len(self.signature)) + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "DeviceCertificate":
        r = _Reader(data)
        if r.take(4) != b"SRAC":
            raise MalformedError("bad certificate magic")
        subject = r.str16()
        try:
            role = Role(r.take(1)[0])
        except ValueError as exc:
            raise MalformedError("unknown certificate role") from exc
        (klen,) = r.unpack(">H")
        key = r.take(klen)
        issuer = r.str16()
        (slen,) = r.unpack(">H")
        sig = r.take(slen)
        r.done()
        return cls(subject, role, key, issuer, sig)

    def digest(self) -> bytes:
        return hashlib.sha256(self.body()).digest()


def encode_chain(chain: Sequence[DeviceCertificate]) -> bytes:
    out = [struct.pack(">H", len(chain))]
    for cert in chain:
        raw = cert.encode()
        out.append(struct.pack(">I", len(raw)) + raw)
    return b"".join(out)


def decode_chain(data: bytes) -> tuple[DeviceCertificate, ...]:
    r = _Reader(data)
    (count,) = r.unpack(">H")
    certs = []
    for _ in range(count):
        (n,) = r.unpack(">I")
        certs.append(DeviceCertificate.decode(r.take(n)))
    r.done()
    return tuple(certs)


@dataclasses.dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    reason: str = ""
    link: int | None = None

    def __bool__(self):
        return self.valid


def verify_chain(chain, trust_root: DeviceCertificate) -> ChainVerdict:
    """Validate a leaf-first chain up to ``trust_root``.

    A bare certificate is accepted as a one-element chain. Each link must
    be signed by the next certificate, issuers must be CA roles and the
    final certificate must be byte-identical to ``trust_root``.
    """
    if isinstance(chain, DeviceCertificate):
        chain = [chain]
    chain = list(chain)
    if not chain:
        return ChainVerdict(False, "empty_chain")
    for i, cert in enumerate(chain):
        issuer = chain[i + 1] if i + 1 < len(chain) else cert
        if cert.issuer_id != issuer.subject_id:
            return ChainVerdict(False, "broken_link", i)
        if issuer.role not in ISSUING_ROLES:
            return ChainVerdict(False, "issuer_not_ca", i)
        if not verify_prehashed(issuer.public_key, cert.digest(), cert.signature):
            return ChainVerdict(False, "bad_signature", i)
    last = len(chain) - 1
    if chain[-1].role is not Role.manufacturer_root:
        return ChainVerdict(False, "not_rooted", last)
    if chain[-1].encode() != trust_root.encode():
        return ChainVerdict(False, "untrusted_root", last)
    return ChainVerdict(True)


# -- identities & provisioning -------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Identity:
    """A private key plus its leaf-first certificate chain."""

    private_key: ec.EllipticCurvePrivateKey = dataclasses.field(repr=False)
    chain: tuple[DeviceCertificate, ...]

    @property
    def certificate(self) -> DeviceCertificate:
        return self.chain[0]

    @property
    def subject_id(self) -> str:
        return self.chain[0].subject_id

    @property
    def root(self) -> DeviceCertificate:
        return self.chain[-1]


def make_root(subject_id: str = "manufacturer-root", key=None) -> Identity:
    key = key or ec.generate_private_key(CURVE)
    cert = DeviceCertificate(subject_id, Role.manufacturer_root, public_bytes(key), subject_id)
    cert = dataclasses.replace(cert, signature=sign_prehashed(key, cert.digest()))
    return Identity(key, (cert,))


def issue(issuer: Identity, subject_id: str, role: Role, key=None) -> Identity:
    if issuer.certificate.role not in ISSUING_ROLES:
        raise SRAError(f"{issuer.subject_id} cannot issue certificates")
    key = key or ec.generate_private_key(CURVE)
    cert = DeviceCertificate(subject_id, Role(role), public_bytes(key), issuer.subject_id)
    cert = dataclasses.replace(cert, signature=sign_prehashed(issuer.private_key, cert.digest()))
    return Identity(key, (cert,) + issuer.chain)


class KeyStore:
    """Directory of hex records: ``<name>.key`` (private scalar) and
    ``<name>.chain`` (one encoded certificate per line, leaf first)."""

    def __init__(self, path):
        self.path = Path(path)

    def exists(self, name: str) -> bool:
        return (self.path / f"{name}.chain").exists()

    def save(self, name: str, identity: Identity, force: bool = False) -> None:
        if self.exists(name) and not force:
            raise SRAError(f"identity {name!r} already exists in {self.path}; use force")
        self.path.mkdir(parents=True, exist_ok=True)
        key_file = self.path / f"{name}.key"
        key_file.write_text(private_scalar(identity.private_key).hex() + "\n")
        os.chmod(key_file, 0o600)
        (self.path / f"{name}.chain").write_text(
            "".join(c.encode().hex() + "\n" for c in identity.chain)
        )

    def chain(self, name: str) -> tuple[DeviceCertificate, ...]:
        path = self.path / f"{name}.chain"
        if not path.exists():
            raise SRAError(f"no identity {name!r} in {self.path}")
        return tuple(
            DeviceCertificate.decode(bytes.fromhex(line))
            for line in path.read_text().split()
        )

    def load(self, name: str) -> Identity:
        chain = self.chain(name)
        scalar = bytes.fromhex((self.path / f"{name}.key").read_text().strip())
        return Identity(key_from_scalar(scalar), chain)

    def trust_root(self, name: str = "root") -> DeviceCertificate:
        return self.chain(name)[-1]


def keygen(role: str, key_store_path, name: str | None = None, issuer: str = "root",
           force: bool = False) -> Identity:
    """Create a root (``role='root'``) or a device identity signed by ``issuer``."""
    store = KeyStore(key_store_path)
    name = name or role
    if store.exists(name) and not force:
        raise SRAError(f"identity {name!r} already exists in {store.path}; use force")
    tag = os.urandom(4).hex()
    if role in ("root", "manufacturer_root"):
        identity = make_root(f"manufacturer-root-{tag}")
    else:
        if not store.exists(issuer):
            raise SRAError(f"issuer {issuer!r} not found in {store.path}; create the root first")
        identity = issue(store.load(issuer), f"{role}-{tag}", Role[role])
    store.save(name, identity, force=force)
    return identity


# -- session keys ----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SessionKeys:
    aead_key: bytes = dataclasses.field(repr=False)
    mac_key: bytes = dataclasses.field(repr=False)
    nonce_salt: int = dataclasses.field(repr=False)
    session_id: int = 0


def _extract(salt: bytes, ikm: bytes) -> bytes:
    return hmac.new(salt, ikm, hashlib.sha256).digest()


def _expand(prk: bytes, label: str, length: int) -> bytes:
    return HKDFExpand(hashes.SHA256(), length, b"sra v1 " + label.encode()).derive(prk)


def derive_keys(shared_secret: bytes, transcript_hash: bytes) -> SessionKeys:
    """HKDF-SHA256: extract with the transcript hash as salt, then labelled expands."""
    prk = _extract(transcript_hash, shared_secret)
    return SessionKeys(
        aead_key=_expand(prk, "aead key", 16),
        mac_key=_expand(prk, "mac key", 16),
        nonce_salt=int.from_bytes(_expand(prk, "nonce salt", 4), "big"),
        session_id=int.from_bytes(_expand(prk, "session id", 8), "big"),
    )


# -- handshake -------------------------------------------------------------------

class Msg(enum.IntEnum):
    GET_VERSION = 0x84
    VERSION = 0x04
    CERTIFICATE_I = 0x82
    CERTIFICATE_R = 0x02
    CHALLENGE = 0x83
    CHALLENGE_AUTH = 0x03
    KEY_EXCHANGE = 0xE4
    KEY_EXCHANGE_RSP = 0x64
    FINISH = 0xE5
    FINISH_RSP = 0x65


class Phase(str, enum.Enum):
    idle = "idle"
    version_agreed = "version_agreed"
    certs_exchanged = "certs_exchanged"
    challenged = "challenged"
    keyed = "keyed"
    established = "established"
    failed = "failed"


PHASE_ORDER = [Phase.idle, Phase.version_agreed, Phase.certs_exchanged,
               Phase.challenged, Phase.keyed, Phase.established]


def encode_message(kind: Msg, payload: bytes) -> bytes:
    return struct.pack(">BI", int(kind), len(payload)) + payload


def decode_message(data: bytes) -> tuple[Msg, bytes]:
    if len(data) < 5:
        raise MalformedError("truncated handshake message")
    kind, n = struct.unpack_from(">BI", data)
    if len(data) != 5 + n:
        raise MalformedError("handshake message length mismatch")
    try:
        return Msg(kind), bytes(data[5:])
    except ValueError as exc:
        raise MalformedError(f"unknown handshake message {kind:#04x}") from exc


@dataclasses.dataclass
class HandshakeState:
    phase: Phase = Phase.idle
    transcript: "hashlib._Hash" = dataclasses.field(default_factory=hashlib.sha256)
    peer_cert: DeviceCertificate | None = None
    ephemeral_secret: ec.EllipticCurvePrivateKey | None = dataclasses.field(
        default=None, repr=False
    )


class Endpoint:
    """One side of the handshake; reacts to inbound messages with outbound ones."""

    def __init__(self, identity: Identity, trust_root: DeviceCertificate, initiator: bool,
                 rng: Callable[[int], bytes] = os.urandom, deterministic: bool = False):
        self._identity = identity
        self.trust_root = trust_root
        self.initiator = initiator
        self._rng = rng
        self._deterministic = deterministic
        self.state = HandshakeState()
        self.peer_chain: tuple[DeviceCertificate, ...] = ()
        self._keys: SessionKeys | None = None
        self._my_nonce = b""
        self._peer_authenticated = False
        self._challenge_sent = False
        self._shared = b""
        self._finished_i = self._finished_r = b""

    @property
    def name(self) -> str:
        return "host" if self.initiator else "sensor"

    @property
    def phase(self) -> Phase:
        return self.state.phase

    @property
    def keys(self) -> SessionKeys | None:
        return self._keys if self.state.phase is Phase.established else None

    @property
    def peer_id(self) -> str | None:
        return self.state.peer_cert.subject_id if self.state.peer_cert else None

    # transcript bookkeeping

    def _th(self) -> bytes:
        return self.state.transcript.copy().digest()

    def _send(self, out: list, kind: Msg, payload: bytes) -> None:
        msg = encode_message(kind, payload)
        self.state.transcript.update(msg)
        out.append(msg)

    def _advance(self, phase: Phase) -> None:
        cur = PHASE_ORDER.index(self.state.phase)
        if PHASE_ORDER.index(phase) != cur + 1:
            raise AssertionError(f"illegal transition {self.state.phase} -> {phase}")
        self.state.phase = phase
        log.debug("%s handshake phase -> %s", self.name, phase.value)

    def _fail(self, reason: str, link=None, detail="", at: Phase | None = None) -> HandshakeError:
        phase = at or self.state.phase
        self.state.phase = Phase.failed
        self.state.ephemeral_secret = None
        self._shared = b""
        self._keys = None
        log.info("%s handshake failed in %s: %s", self.name, phase.value, reason)
        return HandshakeError(phase.value, reason, link, detail)

    def abort(self) -> None:
        """Fail the handshake permanently, discarding any secret state."""
        if self.state.phase is not Phase.failed:
            self._fail("aborted")

    # protocol

    def start(self) -> list[bytes]:
        if not self.initiator or self.state.phase is not Phase.idle:
            raise self._fail("unexpected_start")
        out: list[bytes] = []
        self._send(out, Msg.GET_VERSION, bytes(SUPPORTED_VERSIONS))
        return out

    def receive(self, data: bytes) -> list[bytes]:
        if self.state.phase in (Phase.failed, Phase.established):
            raise self._fail("session_closed")
        try:
            kind, payload = decode_message(data)
        except MalformedError as exc:
            raise self._fail("malformed_message", detail=str(exc)) from None
        before = self._th()
        self.state.transcript.update(data)
        out: list[bytes] = []
        try:
            handler = self._dispatch(kind)
            handler(payload, before, out)
        except HandshakeError:
            raise
        except MalformedError as exc:
            raise self._fail("malformed_message", detail=str(exc)) from None
        return out

    def _dispatch(self, kind: Msg):
        phase = self.state.phase
        table = {
            (True, Phase.idle, Msg.VERSION): self._on_version,
            (True, Phase.version_agreed, Msg.CERTIFICATE_R): self._on_certificate,
            (True, Phase.certs_exchanged, Msg.CHALLENGE_AUTH): self._on_challenge_auth,
            (True, Phase.certs_exchanged, Msg.CHALLENGE): self._on_challenge,
            (True, Phase.challenged, Msg.KEY_EXCHANGE_RSP): self._on_key_exchange_rsp,
            (True, Phase.keyed, Msg.FINISH_RSP): self._on_finish_rsp,
            (False, Phase.idle, Msg.GET_VERSION): self._on_get_version,
            (False, Phase.version_agreed, Msg.CERTIFICATE_I): self._on_certificate,
            (False, Phase.certs_exchanged, Msg.CHALLENGE): self._on_challenge,
            (False, Phase.certs_exchanged, Msg.CHALLENGE_AUTH): self._on_challenge_auth,
            (False, Phase.challenged, Msg.KEY_EXCHANGE): self._on_key_exchange,
            (False, Phase.keyed, Msg.FINISH): self._on_finish,
        }
        handler = table.get((self.initiator, phase, kind))
        if handler is None:
            raise self._fail("unexpected_message", detail=kind.name)
        return handler

    def _on_get_version(self, payload, before, out):
        common = [v for v in SUPPORTED_VERSIONS if v in payload]
        if not common:
            raise self._fail("no_common_version")
        self._advance(Phase.version_agreed)
        self._send(out, Msg.VERSION, bytes([max(common)]))

    def _on_version(self, payload, before, out):
        if len(payload) != 1 or payload[0] not in SUPPORTED_VERSIONS:
            raise self._fail("no_common_version")
        self._advance(Phase.version_agreed)
        self._send(out, Msg.CERTIFICATE_I, encode_chain(self._identity.chain))

    def _on_certificate(self, payload, before, out):
        chain = decode_chain(payload)
        verdict = verify_chain(chain, self.trust_root)
        if not verdict:
            raise self._fail(f"chain_{verdict.reason}", link=verdict.link,
                             at=Phase.certs_exchanged)
        expected = Role.sensor if self.initiator else Role.host
        if chain[0].role is not expected:
            raise self._fail("wrong_peer_role", link=0, at=Phase.certs_exchanged)
        self.peer_chain = chain
        self.state.peer_cert = chain[0]
        self._advance(Phase.certs_exchanged)
        if self.initiator:
            self._my_nonce = self._rng(32)
            self._send(out, Msg.CHALLENGE, self._my_nonce)
            self._challenge_sent = True
        else:
            self._send(out, Msg.CERTIFICATE_R, encode_chain(self._identity.chain))

    def _challenge_digest(self, th: bytes, responder_is_initiator: bool) -> bytes:
        label = b"sra challenge by host" if responder_is_initiator else b"sra challenge by sensor"
        return hashlib.sha256(label + th).digest()

    def _on_challenge(self, payload, before, out):
        if len(payload) != 32:
            raise MalformedError("challenge nonce must be 32 bytes")
        if self.initiator and not self._peer_authenticated:
            raise self._fail("unexpected_message", detail="CHALLENGE before CHALLENGE_AUTH")
        sig = sign_prehashed(self._identity.private_key,
                             self._challenge_digest(self._th(), self.initiator),
                             self._deterministic)
        self._send(out, Msg.CHALLENGE_AUTH, sig)
        if self.initiator:
            self._advance(Phase.challenged)
            self.state.ephemeral_secret = key_from_rng(self._rng)
            self._send(out, Msg.KEY_EXCHANGE, public_bytes(self.state.ephemeral_secret))
        else:
            self._my_nonce = self._rng(32)
            self._send(out, Msg.CHALLENGE, self._my_nonce)
            self._challenge_sent = True

    def _on_challenge_auth(self, payload, before, out):
        if not self._challenge_sent or self._peer_authenticated:
            raise self._fail("unexpected_message", detail="CHALLENGE_AUTH without challenge")
        digest = self._challenge_digest(before, not self.initiator)
        if not verify_prehashed(self.state.peer_cert.public_key, digest, payload):
            raise self._fail("challenge_signature")
        self._peer_authenticated = True
        if not self.initiator:
            self._advance(Phase.challenged)

    def _kx_digest(self, th: bytes, eph_pub: bytes) -> bytes:
        return hashlib.sha256(b"sra key exchange" + th + eph_pub).digest()

    def _ecdh(self, peer_pub: bytes) -> bytes:
        if len(peer_pub) != PUBKEY_LEN:
            raise MalformedError("ephemeral key must be an uncompressed P-256 point")
        shared = self.state.ephemeral_secret.exchange(ec.ECDH(), load_public(peer_pub))
        self.state.ephemeral_secret = None
        return shared

    def _finished_keys(self) -> None:
        prk = _extract(self._th(), self._shared)
        self._finished_i = _expand(prk, "finished initiator", 32)
        self._finished_r = _expand(prk, "finished responder", 32)

    def _on_key_exchange(self, payload, before, out):
        self.state.ephemeral_secret = key_from_rng(self._rng)
        eph_pub = public_bytes(self.state.ephemeral_secret)
        self._shared = self._ecdh(payload)
        sig = sign_prehashed(self._identity.private_key, self._kx_digest(self._th(), eph_pub),
                             self._deterministic)
        self._send(out, Msg.KEY_EXCHANGE_RSP, eph_pub + sig)
        self._finished_keys()
        self._advance(Phase.keyed)

    def _on_key_exchange_rsp(self, payload, before, out):
        if len(payload) != PUBKEY_LEN + SIG_LEN:
            raise MalformedError("bad KEY_EXCHANGE_RSP length")
        eph_pub, sig = payload[:PUBKEY_LEN], payload[PUBKEY_LEN:]
        if not verify_prehashed(self.state.peer_cert.public_key,
                                self._kx_digest(before, eph_pub), sig):
            raise self._fail("key_exchange_signature")
        self._shared = self._ecdh(eph_pub)
        self._finished_keys()
        self._advance(Phase.keyed)
        self._send(out, Msg.FINISH, hmac.new(self._finished_i, self._th(), "sha256").digest())

    def _on_finish(self, payload, before, out):
        expected = hmac.new(self._finished_i, before, "sha256").digest()
        if not hmac.compare_digest(expected, payload):
            raise self._fail("transcript_mismatch")
        self._send(out, Msg.FINISH_RSP, hmac.new(self._finished_r, self._th(), "sha256").digest())
        self._establish()

    def _on_finish_rsp(self, payload, before, out):
        expected = hmac.new(self._finished_r, before, "sha256").digest()
        if not hmac.compare_digest(expected, payload):
            raise self._fail("transcript_mismatch")
        self._establish()

    def _establish(self) -> None:
        self._keys = derive_keys(self._shared, self._th())
        self._shared = b""
        self._finished_i = self._finished_r = b""
        self._advance(Phase.established)
        log.info("%s session established with %s (session %016x)",
                 self.name, self.peer_id, self._keys.session_id)


# hook(direction, index, message) -> messages actually delivered
MessageHook = Callable[[str, int, bytes], Sequence[bytes]]


def drive(host: Endpoint, sensor: Endpoint, hook: MessageHook | None = None,
          record: Callable[[str, bytes], None] | None = None) -> None:
    """Pump messages between the endpoints until both are established.

    Raises HandshakeError if either side fails or the exchange stalls.
    """
    try:
        queue = deque(("host->sensor", m) for m in host.start())
        index = 0
        while queue:
            direction, msg = queue.popleft()
            delivered = hook(direction, index, msg) if hook else [msg]
            index += 1
            target = sensor if direction == "host->sensor" else host
            back = "sensor->host" if direction == "host->sensor" else "host->sensor"
            for m in delivered:
                if record:
                    record(direction, m)
                for reply in target.receive(m):
                    queue.append((back, reply))
        for ep in (host, sensor):
            if ep.phase is not Phase.established:
                raise HandshakeError(ep.phase.value, "stalled")
    except HandshakeError:
        # one-sided success is still failure: neither side keeps keys
        host.abort()
        sensor.abort()
        raise


def run_handshake(initiator_identity: Identity, responder_identity: Identity,
                  trust_root: DeviceCertificate, hook: MessageHook | None = None,
                  rng: Callable[[int], bytes] = os.urandom, deterministic: bool = False,
                  ) -> tuple[SessionKeys, SessionKeys]:
    """Authenticate host (initiator) and sensor (responder); return both key sets."""
    host = Endpoint(initiator_identity, trust_root, initiator=True, rng=rng,
                    deterministic=deterministic)
    sensor = Endpoint(responder_identity, trust_root, initiator=False, rng=rng,
                      deterministic=deterministic)
    drive(host, sensor, hook)
    return host.keys, sensor.keys
