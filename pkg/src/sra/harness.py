"""Scripted attacks against the real pipeline.

Each scenario provisions fresh identities, runs the unmodified pipeline and
acts only on wire packets or emitted file bytes. The observed outcome is
compared with the expected detection.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import os
import struct

from .csi2 import DT_RAW10, Csi2Packet, decode_packet
from .errors import HandshakeError
from .pipeline import Pipeline, PipelineConfig, SessionRecord, packetize
from .protection import protect
from .provenance import ASSET_MAGIC, verify_asset
from .session import Role, SessionKeys, issue, make_root, private_scalar


class AttackScenario(str, enum.Enum):
    hdmi_injection = "hdmi_injection"
    replay = "replay"
    transit_tamper = "transit_tamper"
    reorder = "reorder"
    manifest_strip = "manifest_strip"
    post_sign_edit = "post_sign_edit"
    key_exfil_probe = "key_exfil_probe"


class Outcome(str, enum.Enum):
    handshake_failure = "handshake_failure"
    frame_rejected = "frame_rejected"
    verify_invalid = "verify_invalid"
    no_key_material_found = "no_key_material_found"
    key_material_found = "key_material_found"
    undetected = "undetected"


EXPECTED = {
    AttackScenario.hdmi_injection: Outcome.handshake_failure,
    AttackScenario.replay: Outcome.frame_rejected,
    AttackScenario.transit_tamper: Outcome.frame_rejected,
    AttackScenario.reorder: Outcome.frame_rejected,
    AttackScenario.manifest_strip: Outcome.verify_invalid,
    AttackScenario.post_sign_edit: Outcome.verify_invalid,
    AttackScenario.key_exfil_probe: Outcome.no_key_material_found,
}


@dataclasses.dataclass
class ScenarioReport:
    scenario: AttackScenario
    outcome: Outcome
    detail: str = ""
    transcript: list[str] = dataclasses.field(default_factory=list)

    @property
    def expected(self) -> Outcome:
        return EXPECTED[self.scenario]

    @property
    def passed(self) -> bool:
        return self.outcome is self.expected

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.scenario.value}: expected={self.expected.value} "
                f"observed={self.outcome.value} detail={self.detail}")

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.value, "expected": self.expected.value,
                "outcome": self.outcome.value, "passed": self.passed,
                "detail": self.detail, "transcript": self.transcript}


def default_config(**kw) -> PipelineConfig:
    kw.setdefault("width", 64)
    kw.setdefault("height", 48)
    return PipelineConfig(**kw)


@dataclasses.dataclass
class _Provisioned:
    root: object
    host: object
    sensor: object

    @property
    def trust_root(self):
        return self.root.certificate


def _provision() -> _Provisioned:
    root = make_root(f"manufacturer-root-{os.urandom(4).hex()}")
    return _Provisioned(root, issue(root, f"host-{os.urandom(4).hex()}", Role.host),
                        issue(root, f"sensor-{os.urandom(4).hex()}", Role.sensor))


def _pipeline(p: _Provisioned, config, **kw) -> Pipeline:
    return Pipeline(config, p.host, p.sensor, p.trust_root, **kw)


# -- runners --------------------------------------------------------------------

def _hdmi_injection(config, log):
    p = _provision()
    rogue_root = make_root("rogue-bridge-root")
    rogue = issue(rogue_root, "toshiba-bridge", Role.sensor)
    pipe = Pipeline(config, p.host, rogue, p.trust_root)
    handshake_failed = False
    try:
        pipe.connect()
        log.append("handshake completed with rogue source")
    except HandshakeError as exc:
        handshake_failed = True
        log.append(f"handshake refused: phase={exc.phase} reason={exc.reason}")
    # Rogue streams well-formed, self-tagged CSI-2 frames regardless.
    fake_keys = SessionKeys(os.urandom(16), os.urandom(16), 0, 0)
    accepted = 0
    for counter in range(1, 4):
        pf = protect(pipe.make_frame(counter), fake_keys, config.profile)
        pipe.wire.inject(pkt.encode() for pkt in packetize(pf))
        for d in pipe.deliver():
            log.append(f"injected frame {d.sequence}: "
                       + ("ACCEPTED" if d.accepted else f"dropped ({d.rejection})"))
            accepted += d.accepted
    if handshake_failed and accepted == 0:
        return Outcome.handshake_failure, "rogue chain refused; 0 injected frames accepted"
    return Outcome.undetected, f"handshake_failed={handshake_failed} accepted={accepted}"


def _frames_outcome(deliveries, log, victim_seq):
    for d in deliveries:
        log.append(f"frame {d.sequence}: " + ("accepted" if d.accepted else f"rejected ({d.rejection})"))
    victim = [d for d in deliveries if d.sequence == victim_seq and not d.accepted]
    if victim:
        return Outcome.frame_rejected, victim[0].rejection
    return Outcome.undetected, "attacked frame was accepted"


def _replay(config, log):
    pipe = _pipeline(_provision(), config)
    pipe.connect()
    captured = pipe.send(pipe.make_frame(1))
    first = pipe.deliver()
    pipe.send(pipe.make_frame(2))
    second = pipe.deliver()
    log.append("attacker re-injects recorded packets of frame 1")
    pipe.wire.inject(captured)
    third = pipe.deliver()
    if not all(d.accepted for d in first + second):
        return Outcome.undetected, "setup frames not accepted"
    return _frames_outcome(first + second + third, log, 1)


def _flip_line(packets, line_index=3, byte_index=7, bit=2):
    """Flip one pixel bit in a line packet and recompute its CRC, like a capable MITM."""
    out, seen = [], 0
    for raw in packets:
        pkt, _ = decode_packet(raw)
        if pkt.data_type == DT_RAW10:
            if seen == line_index:
                payload = bytearray(pkt.payload)
                payload[byte_index % len(payload)] ^= 1 << bit
                raw = Csi2Packet.long(DT_RAW10, bytes(payload), pkt.header.virtual_channel).encode()
            seen += 1
        out.append(raw)
    return out


def _transit_tamper(config, log):
    pipe = _pipeline(_provision(), config, wire_tap=_flip_line)
    pipe.connect()
    log.append("tap flips one bit in line 3 of every frame and fixes the CRC")
    pipe.send(pipe.make_frame(1))
    return _frames_outcome(pipe.deliver(), log, 1)


def _reorder(config, log):
    held: list[list[bytes]] = []

    def tap(packets):
        if not held:
            held.append(packets)
            return []
        return packets + held.pop()

    pipe = _pipeline(_provision(), config, wire_tap=tap)
    pipe.connect()
    log.append("tap delays frame 1 until after frame 2")
    pipe.send(pipe.make_frame(1))
    pipe.send(pipe.make_frame(2))
    return _frames_outcome(pipe.deliver(), log, 1)


def _signed_asset(config, log):
    p = _provision()
    pipe = _pipeline(p, config)
    pipe.connect()
    pipe.send(pipe.make_frame(1))
    (d,) = pipe.deliver()
    verdict = verify_asset(d.asset_bytes, p.trust_root)
    log.append(f"original asset verdict: {'valid' if verdict.valid else verdict.reasons}")
    if not verdict.valid:
        raise RuntimeError("harness setup produced an invalid asset")
    return p, d.asset_bytes


def _verify_outcome(data, trust_root, log):
    verdict = verify_asset(data, trust_root)
    log.append(f"tampered asset verdict: exit={verdict.exit_code} reasons={','.join(verdict.reasons)}")
    if verdict.valid:
        return Outcome.undetected, "tampered asset verified"
    return Outcome.verify_invalid, ",".join(verdict.reasons)


def _manifest_strip(config, log):
    p, data = _signed_asset(config, log)
    (img_len,) = struct.unpack_from(">Q", data, 4)
    image = data[12:12 + img_len]
    stripped = ASSET_MAGIC + struct.pack(">Q", img_len) + image + struct.pack(">Q", 0)
    log.append("manifest section removed, image kept")
    return _verify_outcome(stripped, p.trust_root, log)


def _post_sign_edit(config, log):
    p, data = _signed_asset(config, log)
    edited = bytearray(data)
    pixel_offset = 4 + 8 + 12 + 3 * (config.width + 1)  # pixel (1,1), red channel
    edited[pixel_offset] ^= 0x10
    log.append(f"edited one pixel byte at container offset {pixel_offset}")
    return _verify_outcome(bytes(edited), p.trust_root, log)


def _secret_forms(secret: bytes):
    yield secret
    yield secret.hex().encode()
    yield secret.hex().upper().encode()
    yield str(int.from_bytes(secret, "big")).encode()


def key_exfil_probe(record, secrets) -> tuple[Outcome, list[str]]:
    """Search every recorded outward stream for any form of the given secrets."""
    findings = []
    for channel, data in record:
        for i, secret in enumerate(secrets):
            for form in _secret_forms(secret):
                if form in data:
                    findings.append(f"secret {i} found in {channel} stream")
                    break
    return (Outcome.key_material_found if findings else Outcome.no_key_material_found), findings


def capture_session_record(config, frames: int = 3):
    """Full session with every outward byte stream recorded; returns (record, secrets)."""
    p = _provision()
    record = SessionRecord()
    with record.capture_logs():
        pipe = _pipeline(p, config, record=record)
        pipe.connect()
        for counter in range(1, frames + 1):
            pipe.send(pipe.make_frame(counter))
            for d in pipe.deliver():
                record.add("asset_file", d.asset_bytes)
        record.add("chain", b"".join(c.encode() for c in pipe.enclave.certificate_chain))
    secrets = [private_scalar(p.host.private_key), private_scalar(p.sensor.private_key),
               private_scalar(p.root.private_key)]
    return record, secrets


def _key_exfil(config, log):
    record, secrets = capture_session_record(config)
    log.append(f"recorded {len(record.streams)} outward byte streams")
    outcome, findings = key_exfil_probe(record, secrets)
    log.extend(findings)
    return outcome, f"{len(findings)} findings"


RUNNERS = {
    AttackScenario.hdmi_injection: _hdmi_injection,
    AttackScenario.replay: _replay,
    AttackScenario.transit_tamper: _transit_tamper,
    AttackScenario.reorder: _reorder,
    AttackScenario.manifest_strip: _manifest_strip,
    AttackScenario.post_sign_edit: _post_sign_edit,
    AttackScenario.key_exfil_probe: _key_exfil,
}


def run_scenario(scenario, config: PipelineConfig | None = None) -> ScenarioReport:
    scenario = AttackScenario(scenario)
    config = config or default_config()
    transcript: list[str] = []
    outcome, detail = RUNNERS[scenario](config, transcript)
    return ScenarioReport(scenario, outcome, detail, transcript)


def run_all(config: PipelineConfig | None = None) -> list[ScenarioReport]:
    return [run_scenario(s, config) for s in AttackScenario]


def write_report(reports, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
