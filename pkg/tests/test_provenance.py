import dataclasses
import hashlib
import random
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sra.errors import ManifestRefused, MalformedError
from sra.protection import CipherProfile
from sra.provenance import (
    ASSET_MAGIC,
    Assertion,
    AssertionKind,
    CaptureContext,
    Manifest,
    SignedAsset,
    build_manifest,
    canonical_serialize,
    encode_image_payload,
    parse_canonical,
    verify_asset,
)
from sra.session import Role, issue, make_root, sign_prehashed


def _context(chain, **kw):
    base = dict(session_id=0xABCDEF, sequence=42, profile=CipherProfile.performance_aead,
                device_cert_chain=chain, auth_status="succeeded", time=1_700_000_000,
                sensor_id="sensor-x")
    base.update(kw)
    return CaptureContext(**base)


def _sign(manifest, identity):
    return dataclasses.replace(manifest, signature=sign_prehashed(identity.private_key,
                                                                  manifest.signing_digest()))


def _image(w=8, h=4, seed=0):
    rgb = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    return encode_image_payload(w, h, rgb)


@pytest.fixture
def device(root):
    return issue(root, "enclave-device", Role.host)


@pytest.fixture
def asset(device):
    payload = _image()
    manifest = _sign(build_manifest(payload, _context(device.chain)), device)
    return SignedAsset(payload, manifest)


# -- building ---------------------------------------------------------------------

def test_six_assertions_in_fixed_order(device):
    m = build_manifest(_image(), _context(device.chain))
    assert [a.kind for a in m.assertions] == list(AssertionKind)
    assert m.assertions[0].kind is AssertionKind.hard_binding


def test_empty_payload_hard_binding(device):
    m = build_manifest(b"", _context(device.chain))
    assert m.assertion(AssertionKind.hard_binding).get("hash").hex() == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


def test_frame_counter_passthrough(device):
    m = build_manifest(_image(), _context(device.chain, sequence=42))
    assert m.assertion(AssertionKind.frame_counter).get("value") == 42


def test_secure_pipeline_assertion(device):
    m = build_manifest(_image(), _context(device.chain))
    sp = m.assertion(AssertionKind.secure_pipeline).as_dict()
    assert sp["cipher"] == "AES-GCM-128"
    assert sp["authentication"] == "Succeeded"
    assert sp["session_id"] == 0xABCDEF
    eff = build_manifest(_image(), _context(device.chain,
                                            profile=CipherProfile.efficiency_integrity_only))
    assert eff.assertion(AssertionKind.secure_pipeline).get("cipher") == "AES-CMAC-128"


def test_firmware_marks_simulation(device):
    m = build_manifest(_image(), _context(device.chain))
    assert m.assertion(AssertionKind.firmware_info).get("environment") == "simulated-enclave"


@pytest.mark.parametrize("status", ["failed", "pending", "Succeeded", ""])
def test_refuses_unauthenticated(device, status):
    with pytest.raises(ManifestRefused):
        build_manifest(_image(), _context(device.chain, auth_status=status))


# -- canonical encoding ---------------------------------------------------------------

_values = st.one_of(st.integers(0, 2**64 - 1), st.text(max_size=20), st.binary(max_size=40))
_assertions = st.builds(
    Assertion,
    st.sampled_from(list(AssertionKind)),
    st.lists(st.tuples(st.text(max_size=10), _values), max_size=5).map(tuple),
)
_manifests = st.builds(Manifest, st.lists(_assertions, max_size=8).map(tuple),
                       st.text(max_size=30), st.integers(0, 2**64 - 1))


@settings(max_examples=200)
@given(_manifests)
def test_canonical_round_trip(m):
    raw = canonical_serialize(m)
    assert parse_canonical(raw) == m
    assert canonical_serialize(parse_canonical(raw)) == raw


def test_canonical_is_deterministic(device):
    m = build_manifest(_image(), _context(device.chain))
    assert canonical_serialize(m) == canonical_serialize(m)


def test_timestamp_changes_bytes(device):
    a = build_manifest(_image(), _context(device.chain, time=1))
    b = build_manifest(_image(), _context(device.chain, time=2))
    assert canonical_serialize(a) != canonical_serialize(b)


def test_canonical_excludes_signature_and_chain(asset):
    m = asset.manifest
    bare = dataclasses.replace(m, signature=b"", certificate_chain=())
    assert canonical_serialize(bare) == canonical_serialize(m)


def test_non_canonical_values_refused():
    with pytest.raises(TypeError):
        canonical_serialize(Manifest((Assertion(AssertionKind.frame_counter, (("v", True),)),),
                                     "g", 0))


def test_trailing_bytes_malformed(asset):
    with pytest.raises(MalformedError):
        parse_canonical(canonical_serialize(asset.manifest) + b"\x00")


# -- container --------------------------------------------------------------------------

def test_container_round_trip(asset):
    raw = asset.encode()
    assert raw[:4] == ASSET_MAGIC
    (img_len,) = struct.unpack_from(">Q", raw, 4)
    assert img_len == len(asset.image_payload)
    assert SignedAsset.decode(raw) == asset
    assert SignedAsset.decode(raw).encode() == raw


def test_image_payload_decodes(asset):
    assert asset.image().shape == (4, 8, 3)


# -- verification ----------------------------------------------------------------------

def test_fresh_asset_valid(asset, trust_root):
    v = verify_asset(asset.encode(), trust_root)
    assert v.valid and v.exit_code == 0 and v.reasons == ()
    assert "verdict=valid" in v.report()


def test_pixel_flip(asset, trust_root):
    raw = bytearray(asset.encode())
    raw[4 + 8 + 12 + 5] ^= 0x01
    v = verify_asset(bytes(raw), trust_root)
    assert v.reasons == ("hard_binding_mismatch",) and v.exit_code == 1


def test_impostor_chain_untrusted(asset, trust_root):
    rogue_root = make_root("rogue")
    impostor = issue(rogue_root, "enclave-device", Role.host)
    m = _sign(dataclasses.replace(asset.manifest, certificate_chain=impostor.chain), impostor)
    v = verify_asset(SignedAsset(asset.image_payload, m), trust_root)
    assert "untrusted_chain" in v.reasons
    assert v.checks["signature"]  # the impostor's own signature math is fine


def test_swapped_chain_same_key_still_verifies(root, device, asset, trust_root):
    """The chain is outside the signature; a re-issued chain for the same key verifies."""
    reissued = issue(root, "enclave-device-renewed", Role.host, key=device.private_key)
    m = dataclasses.replace(asset.manifest, certificate_chain=reissued.chain)
    assert verify_asset(SignedAsset(asset.image_payload, m), trust_root).valid


def test_double_tamper_reports_both(asset, trust_root):
    kept = tuple(a for a in asset.manifest.assertions if a.kind is not AssertionKind.capture_time)
    m = dataclasses.replace(asset.manifest, assertions=kept)
    image = bytearray(asset.image_payload)
    image[-1] ^= 0xFF
    v = verify_asset(SignedAsset(bytes(image), m), trust_root)
    assert "hard_binding_mismatch" in v.reasons
    assert "missing_assertion:capture_time" in v.reasons
    assert "bad_signature" in v.reasons


def test_duplicate_assertion_is_invalid(asset, device, trust_root):
    extra = asset.manifest.assertions + (asset.manifest.assertions[3],)
    m = _sign(dataclasses.replace(asset.manifest, assertions=extra), device)
    v = verify_asset(SignedAsset(asset.image_payload, m), trust_root)
    assert v.reasons == ("missing_assertion:frame_counter",)


def test_stripped_manifest(asset, trust_root):
    v = verify_asset(SignedAsset(asset.image_payload, None).encode(), trust_root)
    assert v.reasons == ("manifest_missing",) and v.exit_code == 1


@pytest.mark.parametrize("mangle", [lambda b: b[:-1], lambda b: b"SRA2" + b[4:], lambda b: b"",
                                    lambda b: b + b"\x00"])
def test_malformed_containers(asset, trust_root, mangle):
    v = verify_asset(mangle(asset.encode()), trust_root)
    assert v.malformed and v.exit_code == 2


def _mutations(m: Manifest):
    """Every single-field change a forger might try."""
    for i, a in enumerate(m.assertions):
        for j, (key, value) in enumerate(a.body):
            if isinstance(value, int):
                new = value ^ 1
            elif isinstance(value, str):
                new = value + "x"
            else:
                new = bytes([value[0] ^ 1]) + value[1:]
            body = a.body[:j] + ((key, new),) + a.body[j + 1:]
            yield f"{a.kind.name}.{key}", dataclasses.replace(
                m, assertions=m.assertions[:i] + (Assertion(a.kind, body),) + m.assertions[i + 1:])
    yield "timestamp", dataclasses.replace(m, timestamp=m.timestamp + 1)
    yield "claim_generator", dataclasses.replace(m, claim_generator=m.claim_generator + "!")
    for k in (0, 31, 32, 63):
        sig = bytearray(m.signature)
        sig[k] ^= 0x01
        yield f"signature[{k}]", dataclasses.replace(m, signature=bytes(sig))


def test_field_mutation_sweep(asset, trust_root):
    names = []
    for name, mutated in _mutations(asset.manifest):
        v = verify_asset(SignedAsset(asset.image_payload, mutated).encode(), trust_root)
        assert not v.valid, name
        names.append(name)
    assert len(names) > 20


def test_random_bit_flips_never_verify(asset, trust_root):
    raw = asset.encode()
    rng = random.Random(17)
    for bit in rng.sample(range(len(raw) * 8), 600):
        mutated = bytearray(raw)
        mutated[bit // 8] ^= 1 << (bit % 8)
        assert not verify_asset(bytes(mutated), trust_root).valid, bit


def test_hard_binding_matches_payload(asset):
    hb = asset.manifest.assertion(AssertionKind.hard_binding)
    assert hb.get("hash") == hashlib.sha256(asset.image_payload).digest()
