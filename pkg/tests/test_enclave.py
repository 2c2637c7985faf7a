import dataclasses
import hashlib
import inspect
import os
import typing

import numpy as np
import pytest

from sra import enclave as enclave_mod
from sra import isp
from sra.enclave import (
    Enclave,
    EnclaveHandshakePort,
    EnclaveRequest,
    EnclaveResponse,
    FixedClock,
    Opcode,
    ResponseKind,
)
from sra.errors import DimensionError, EnclaveError, FrameRejected
from sra.protection import CipherProfile, protect
from sra.provenance import AssertionKind, SignedAsset, verify_asset
from sra.sensor import BayerOrder, RawFrame, generate_frame
from sra.session import Endpoint, drive, load_public, private_scalar, verify_prehashed


def _connected(host, sensor, trust_root, **kw):
    enc = Enclave(host, trust_root, clock=FixedClock(), deterministic=True, **kw)
    sensor_ep = Endpoint(sensor, trust_root, initiator=False)
    drive(EnclaveHandshakePort(enc), sensor_ep)
    return enc, sensor_ep.keys


@pytest.fixture
def connected(host, sensor, trust_root):
    return _connected(host, sensor, trust_root)


# -- demosaic --------------------------------------------------------------------

@pytest.mark.parametrize("order", list(BayerOrder))
@pytest.mark.parametrize("v", [0, 3, 4, 511, 1023])
def test_flat_field(order, v):
    frame = RawFrame(8, 6, np.full((6, 8), v, dtype=np.uint16), 1, order)
    rgb = isp.demosaic(frame)
    assert rgb.shape == (6, 8, 3)
    assert (rgb == v >> 2).all()


def test_red_corner_quad():
    frame = RawFrame(2, 2, np.array([[1023, 0], [0, 0]], dtype=np.uint16), 1)
    rgb = isp.demosaic(frame)
    assert rgb[0, 0, 0] == 255
    assert rgb[0, 0, 1] == 0 and rgb[0, 0, 2] == 0


def test_sampled_sites_keep_their_value():
    frame = generate_frame(5, 16, 8, 1, BayerOrder.GRBG)
    rgb = isp.demosaic(frame)
    r_mask, g_mask, b_mask = isp.cfa_masks(8, 16, BayerOrder.GRBG)
    s = frame.samples >> 2
    assert (rgb[..., 0][r_mask] == s[r_mask]).all()
    assert (rgb[..., 1][g_mask] == s[g_mask]).all()
    assert (rgb[..., 2][b_mask] == s[b_mask]).all()


@pytest.mark.parametrize("order", list(BayerOrder))
def test_compiled_demosaic_matches_convolution(order):
    frame = generate_frame(11, 64, 48, 1, order)
    assert np.array_equal(isp.demosaic(frame), isp._demosaic_numpy(frame.samples, order))


def test_demosaic_deterministic():
    frame = generate_frame(2, 32, 8, 1)
    assert np.array_equal(isp.demosaic(frame), isp.demosaic(frame))


def test_odd_dimensions_rejected():
    with pytest.raises(DimensionError):
        isp.demosaic_array(np.zeros((3, 4), dtype=np.uint16))


# -- capture ---------------------------------------------------------------------

def test_capture_yields_self_consistent_asset(connected, trust_root):
    enc, keys = connected
    asset = enc.enclave_capture(protect(generate_frame(1, 16, 8, 1), keys))
    hb = asset.manifest.assertion(AssertionKind.hard_binding).get("hash")
    assert hb == hashlib.sha256(asset.image_payload).digest()
    assert verify_asset(asset, trust_root).valid


def test_capture_pixels_equal_direct_demosaic(connected):
    enc, keys = connected
    frame = generate_frame(4, 16, 8, 1)
    asset = enc.enclave_capture(protect(frame, keys))
    assert np.array_equal(asset.image(), isp.demosaic(frame))


def test_tampered_frame_yields_no_asset(connected):
    enc, keys = connected
    pf = protect(generate_frame(1, 16, 8, 1), keys)
    bad = dataclasses.replace(pf, body=bytes([pf.body[0] ^ 1]) + pf.body[1:])
    resp = enc.handle(EnclaveRequest(Opcode.CAPTURE, bad.serialize()))
    assert resp.kind is ResponseKind.error and resp.payload == b"tag_mismatch"
    with pytest.raises(FrameRejected):
        enc.enclave_capture(bad)


def test_replayed_frame_rejected(connected):
    enc, keys = connected
    pf = protect(generate_frame(1, 16, 8, 3), keys)
    enc.enclave_capture(pf)
    resp = enc.handle(EnclaveRequest(Opcode.CAPTURE, pf.serialize()))
    assert resp == EnclaveResponse(ResponseKind.error, b"replay_rejected")


def test_counters_seven_and_eight(connected):
    enc, keys = connected
    base = generate_frame(9, 16, 8, 7)
    a = enc.enclave_capture(protect(base, keys))
    b = enc.enclave_capture(protect(base.with_counter(8), keys))
    fc = AssertionKind.frame_counter
    assert a.manifest.assertion(fc).get("value") == 7
    assert b.manifest.assertion(fc).get("value") == 8
    hb = AssertionKind.hard_binding
    assert a.manifest.assertion(hb) == b.manifest.assertion(hb)
    diff = [x.kind for x, y in zip(a.manifest.assertions, b.manifest.assertions) if x != y]
    assert diff == [fc]


def test_capture_before_handshake(host, trust_root):
    enc = Enclave(host, trust_root)
    resp = enc.handle(EnclaveRequest(Opcode.CAPTURE, b""))
    assert resp == EnclaveResponse(ResponseKind.error, b"no_session")


def test_unprovisioned_vault(trust_root):
    enc = Enclave(None, trust_root)
    for op in (Opcode.OPEN_SESSION, Opcode.SIGN_DIGEST, Opcode.CAPTURE):
        payload = bytes(32) if op is Opcode.SIGN_DIGEST else b""
        resp = enc.handle(EnclaveRequest(op, payload))
        assert resp.kind is ResponseKind.error and resp.payload == b"unprovisioned"
    with pytest.raises(EnclaveError):
        enc.sign_digest(bytes(32))


def test_malformed_capture_request(connected):
    enc, _ = connected
    assert enc.handle(EnclaveRequest(Opcode.CAPTURE, b"\x00" * 10)).payload == b"malformed_request"


def test_profile_pinning(host, sensor, trust_root):
    enc, keys = _connected(host, sensor, trust_root, profile=CipherProfile.performance_aead)
    pf = protect(generate_frame(1, 16, 8, 1), keys, CipherProfile.efficiency_integrity_only)
    with pytest.raises(FrameRejected, match="tag_mismatch"):
        enc.enclave_capture(pf)


# -- signing ---------------------------------------------------------------------

def test_sign_digest_verifies(connected, host):
    enc, _ = connected
    d = hashlib.sha256(b"frame").digest()
    sig = enc.sign_digest(d)
    assert verify_prehashed(host.certificate.public_key, d, sig)


def test_signature_fails_for_other_key(connected, sensor):
    enc, _ = connected
    d = hashlib.sha256(b"frame").digest()
    assert not verify_prehashed(sensor.certificate.public_key, d, enc.sign_digest(d))


def test_signature_fails_for_perturbed_digest(connected, host):
    enc, _ = connected
    d = os.urandom(32)
    sig = enc.sign_digest(d)
    pub = load_public(host.certificate.public_key)
    for i in range(64):
        e = bytearray(d)
        e[i % 32] ^= 1 << (i % 8)
        assert not verify_prehashed(pub, bytes(e), sig)


def test_sign_digest_rejects_wrong_length(connected):
    enc, _ = connected
    resp = enc.handle(EnclaveRequest(Opcode.SIGN_DIGEST, b"short"))
    assert resp.kind is ResponseKind.error


# -- boundary review ---------------------------------------------------------------

def test_no_unsigned_egress_in_public_surface():
    forbidden = {"RawFrame", "RgbImage", "ndarray", "bytes-image"}
    for name, member in inspect.getmembers(Enclave):
        if name.startswith("_"):
            continue
        target = member.fget if isinstance(member, property) else member
        if not callable(target):
            continue
        ret = typing.get_type_hints(target, vars(enclave_mod)).get("return") \
            if hasattr(target, "__annotations__") else None
        assert not any(f in repr(ret) for f in forbidden), name


def test_response_kinds_carry_no_raw_image():
    assert {k.name for k in ResponseKind} == {"handshake", "asset", "signature", "chain", "error"}


def test_public_methods_are_enumerated():
    public = {n for n, _ in inspect.getmembers(Enclave) if not n.startswith("_")}
    assert public == {"handle", "open_session", "handshake", "enclave_capture", "capture",
                      "sign_digest", "certificate_chain", "session_id", "handshake_phase"}


def test_vault_repr_and_chain_hide_private_key(connected, host):
    enc, _ = connected
    scalar = private_scalar(host.private_key)
    chain = enc.handle(EnclaveRequest(Opcode.GET_CHAIN)).payload
    assert scalar not in chain and scalar.hex() not in repr(enc._vault)


def test_asset_round_trip_is_byte_identical(connected):
    enc, keys = connected
    resp = enc.handle(EnclaveRequest(Opcode.CAPTURE,
                                     protect(generate_frame(1, 16, 8, 1), keys).serialize()))
    assert SignedAsset.decode(resp.payload).encode() == resp.payload
