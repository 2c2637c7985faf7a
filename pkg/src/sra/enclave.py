"""Software-simulated trusted execution environment.

The enclave is a message-passing boundary: callers hand in an
:class:`EnclaveRequest` and receive an :class:`EnclaveResponse`. Inside it
live the device signing key, the host side of the sensor handshake, the
session keys and the replay state. Decryption, demosaicing, manifest
construction and signing all happen inside; the only image-bearing value
that ever crosses outward is an encoded SRA1 :class:`SignedAsset`.

Requests are serviced serially, like a TEE command queue. Nothing here is
thread-safe.
"""

from __future__ import annotations

import collections
import dataclasses
import enum
import logging
import os
import struct
import time
from typing import Callable

from .isp import demosaic
from .errors import EnclaveError, FrameRejected, HandshakeError, MalformedError, SRAError
from .protection import CipherProfile, ProtectedFrame, ReplayState, unprotect
from .provenance import CaptureContext, SignedAsset, build_manifest, encode_image_payload
from .sensor import BayerOrder
from .session import (
    DeviceCertificate,
    Endpoint,
    Identity,
    Phase,
    SessionKeys,
    encode_chain,
    sign_prehashed,
)

log = logging.getLogger(__name__)


class Opcode(enum.IntEnum):
    OPEN_SESSION = 1
    HANDSHAKE = 2
    CAPTURE = 3
    SIGN_DIGEST = 4
    GET_CHAIN = 5


class ResponseKind(enum.IntEnum):
    """Everything that can cross outward. No kind carries an unsigned image."""

    handshake = 1   # payload: length-prefixed handshake messages
    asset = 2       # payload: SRA1 container bytes
    signature = 3   # payload: 64-byte r||s
    chain = 4       # payload: encoded certificate chain
    error = 5       # payload: utf-8 reason token


@dataclasses.dataclass(frozen=True)
class EnclaveRequest:
    opcode: Opcode
    payload: bytes = b""


@dataclasses.dataclass(frozen=True)
class EnclaveResponse:
    kind: ResponseKind
    payload: bytes = b""

    def messages(self) -> list[bytes]:
        out, pos = [], 0
        while pos < len(self.payload):
            (n,) = struct.unpack_from(">I", self.payload, pos)
            out.append(self.payload[pos + 4:pos + 4 + n])
            pos += 4 + n
        return out


def _pack_messages(msgs) -> bytes:
    return b"".join(struct.pack(">I", len(m)) + m for m in msgs)


class FixedClock:
    """Test-mode trusted clock."""

    def __init__(self, seconds: int = 1_700_000_000):
        self.seconds = seconds

    def __call__(self) -> int:
        return self.seconds


def system_clock() -> int:
    return int(time.time())


class KeyVault:
    """Holds key material; never serializes the private key outward."""

    __slots__ = ("_signing_key", "device_certificate_chain", "session_keys")

    def __init__(self, identity: Identity | None):
        self._signing_key = identity.private_key if identity else None
        self.device_certificate_chain = identity.chain if identity else ()
        self.session_keys: SessionKeys | None = None

    @property
    def provisioned(self) -> bool:
        return self._signing_key is not None

    def __repr__(self):
        return f"KeyVault(provisioned={self.provisioned}, chain_len={len(self.device_certificate_chain)})"

    def sign(self, digest: bytes, deterministic: bool) -> bytes:
        if self._signing_key is None:
            raise EnclaveError("unprovisioned", "vault holds no signing key")
        return sign_prehashed(self._signing_key, digest, deterministic)


class Enclave:
    def __init__(self, identity: Identity | None, trust_root: DeviceCertificate,
                 clock: Callable[[], int] = system_clock, deterministic: bool = False,
                 rng: Callable[[int], bytes] = os.urandom,
                 bayer_order=BayerOrder.RGGB, profile: CipherProfile | None = None):
        self._vault = KeyVault(identity)
        self._identity = identity
        self._trust_root = trust_root
        self._clock = clock
        self._deterministic = deterministic
        self._rng = rng
        self._bayer_order = BayerOrder(bayer_order)
        self._profile = None if profile is None else CipherProfile(profile)
        self._endpoint: Endpoint | None = None
        self._replay = ReplayState()
        self._peer_id = ""
        self.stage_seconds: collections.defaultdict = collections.defaultdict(float)

    # -- boundary ------------------------------------------------------------

    def handle(self, request: EnclaveRequest) -> EnclaveResponse:
        op = Opcode(request.opcode)
        try:
            if op is Opcode.OPEN_SESSION:
                return self._open_session()
            if op is Opcode.HANDSHAKE:
                return self._handshake(request.payload)
            if op is Opcode.CAPTURE:
                return EnclaveResponse(ResponseKind.asset, self._capture(request.payload).encode())
            if op is Opcode.SIGN_DIGEST:
                return EnclaveResponse(ResponseKind.signature, self._sign(request.payload))
            if op is Opcode.GET_CHAIN:
                return EnclaveResponse(ResponseKind.chain,
                                       encode_chain(self._vault.device_certificate_chain))
        except FrameRejected as exc:
            log.info("enclave rejected frame %s: %s", exc.sequence, exc.reason)
            return EnclaveResponse(ResponseKind.error, exc.reason.encode())
        except HandshakeError as exc:
            return EnclaveResponse(ResponseKind.error, f"handshake:{exc.phase}:{exc.reason}".encode())
        except MalformedError:
            return EnclaveResponse(ResponseKind.error, b"malformed_request")
        except SRAError as exc:
            reason = getattr(exc, "reason", type(exc).__name__)
            return EnclaveResponse(ResponseKind.error, str(reason).encode())
        raise AssertionError(op)

    # -- convenience wrappers (all go through handle) ------------------------

    def open_session(self) -> list[bytes]:
        return self._expect(self.handle(EnclaveRequest(Opcode.OPEN_SESSION)),
                            ResponseKind.handshake).messages()

    def handshake(self, message: bytes) -> list[bytes]:
        return self._expect(self.handle(EnclaveRequest(Opcode.HANDSHAKE, message)),
                            ResponseKind.handshake).messages()

    def enclave_capture(self, pf: ProtectedFrame) -> SignedAsset:
        resp = self.handle(EnclaveRequest(Opcode.CAPTURE, pf.serialize()))
        return SignedAsset.decode(self._expect(resp, ResponseKind.asset).payload)

    capture = enclave_capture

    def sign_digest(self, digest: bytes) -> bytes:
        return self._expect(self.handle(EnclaveRequest(Opcode.SIGN_DIGEST, digest)),
                            ResponseKind.signature).payload

    @property
    def certificate_chain(self) -> tuple[DeviceCertificate, ...]:
        return self._vault.device_certificate_chain

    @property
    def session_id(self) -> int | None:
        keys = self._vault.session_keys
        return keys.session_id if keys else None

    @property
    def handshake_phase(self) -> Phase:
        return self._endpoint.phase if self._endpoint else Phase.idle

    @staticmethod
    def _expect(resp: EnclaveResponse, kind: ResponseKind) -> EnclaveResponse:
        if resp.kind is ResponseKind.error:
            reason = resp.payload.decode()
            if reason in ("tag_mismatch", "replay_rejected", "session_mismatch"):
                raise FrameRejected(reason)
            if reason.startswith("handshake:"):
                _, phase, why = reason.split(":", 2)
                raise HandshakeError(phase, why)
            raise EnclaveError(reason)
        if resp.kind is not kind:
            raise EnclaveError("unexpected_response", resp.kind.name)
        return resp

    # -- internals -----------------------------------------------------------

    def _require_vault(self) -> None:
        if not self._vault.provisioned:
            raise EnclaveError("unprovisioned", "vault holds no signing key")

    def _open_session(self) -> EnclaveResponse:
        self._require_vault()
        self._vault.session_keys = None
        self._replay = ReplayState()
        self._endpoint = Endpoint(self._identity, self._trust_root, initiator=True,
                                  rng=self._rng, deterministic=self._deterministic)
        return EnclaveResponse(ResponseKind.handshake, _pack_messages(self._endpoint.start()))

    def _handshake(self, message: bytes) -> EnclaveResponse:
        if self._endpoint is None:
            raise EnclaveError("no_session", "open a session first")
        replies = self._endpoint.receive(message)
        if self._endpoint.phase is Phase.established:
            self._vault.session_keys = self._endpoint.keys
            self._peer_id = self._endpoint.peer_id or ""
        return EnclaveResponse(ResponseKind.handshake, _pack_messages(replies))

    def _sign(self, digest: bytes) -> bytes:
        if len(digest) != 32:
            raise MalformedError("digest must be 32 bytes")
        return self._vault.sign(digest, self._deterministic)

    def _capture(self, payload: bytes) -> SignedAsset:
        self._require_vault()
        keys = self._vault.session_keys
        if keys is None:
            raise EnclaveError("no_session", "handshake not completed")
        pf = ProtectedFrame.parse(payload, self._bayer_order)
        if self._profile is not None and pf.profile is not self._profile:
            raise FrameRejected("tag_mismatch", pf.sequence)

        t0 = time.perf_counter()
        frame = unprotect(pf, keys, self._replay)
        t1 = time.perf_counter()
        rgb = demosaic(frame)
        image_payload = encode_image_payload(frame.width, frame.height, rgb)
        t2 = time.perf_counter()
        ctx = CaptureContext(keys.session_id, pf.sequence, pf.profile,
                             self._vault.device_certificate_chain, "succeeded",
                             int(self._clock()), self._peer_id)
        manifest = build_manifest(image_payload, ctx)
        manifest = dataclasses.replace(manifest,
                                       signature=self._sign(manifest.signing_digest()))
        t3 = time.perf_counter()
        self.stage_seconds["unprotect"] += t1 - t0
        self.stage_seconds["demosaic"] += t2 - t1
        self.stage_seconds["sign"] += t3 - t2
        log.info("enclave sealed frame %d (%dx%d)", pf.sequence, frame.width, frame.height)
        return SignedAsset(image_payload, manifest)


class EnclaveHandshakePort:
    """Adapts the enclave's request interface to the handshake driver."""

    def __init__(self, enclave: Enclave):
        self.enclave = enclave

    @property
    def phase(self) -> Phase:
        return self.enclave.handshake_phase

    def start(self) -> list[bytes]:
        return self.enclave.open_session()

    def receive(self, message: bytes) -> list[bytes]:
        return self.enclave.handshake(message)

    def abort(self) -> None:
        ep = self.enclave._endpoint
        if ep is not None:
            ep.abort()
        self.enclave._vault.session_keys = None
