import json
import os

import pytest

from sra.harness import (
    EXPECTED,
    RUNNERS,
    AttackScenario,
    Outcome,
    capture_session_record,
    default_config,
    key_exfil_probe,
    run_all,
    run_scenario,
    write_report,
)
from sra.pipeline import SessionRecord


def test_every_scenario_has_runner_and_expectation():
    assert set(RUNNERS) == set(AttackScenario) == set(EXPECTED)


@pytest.mark.parametrize("scenario", list(AttackScenario))
def test_scenario_outcome(scenario):
    report = run_scenario(scenario)
    assert report.outcome is EXPECTED[scenario], report.transcript
    assert report.transcript


def test_detail_names_the_failing_check():
    assert run_scenario("replay").detail == "replay_rejected"
    assert run_scenario("reorder").detail == "replay_rejected"
    assert run_scenario("transit_tamper").detail == "tag_mismatch"
    assert "hard_binding_mismatch" in run_scenario("post_sign_edit").detail
    assert run_scenario("manifest_strip").detail == "manifest_missing"


def test_hdmi_injection_transcript_shows_refusal():
    report = run_scenario(AttackScenario.hdmi_injection)
    assert any("certs_exchanged" in line for line in report.transcript)
    assert not any("ACCEPTED" in line for line in report.transcript)


@pytest.mark.parametrize("per_packet", [False, True])
def test_scenarios_hold_for_other_configs(per_packet):
    cfg = default_config(profile="efficiency_integrity_only",
                         tag_carriage="per_packet" if per_packet else "per_frame")
    assert all(r.passed for r in run_all(cfg))


def test_probe_finds_planted_leak():
    secret = os.urandom(32)
    for form in (secret, secret.hex().encode(), secret.hex().upper().encode(),
                 str(int.from_bytes(secret, "big")).encode()):
        record = SessionRecord()
        record.add("wire", b"header" + form + b"trailer")
        outcome, findings = key_exfil_probe(record, [secret])
        assert outcome is Outcome.key_material_found and findings


def test_probe_clean_record():
    record = SessionRecord()
    record.add("wire", os.urandom(1024))
    assert key_exfil_probe(record, [os.urandom(32)])[0] is Outcome.no_key_material_found


def test_session_record_covers_all_channels():
    record, secrets = capture_session_record(default_config(), frames=2)
    channels = {c for c, _ in record}
    assert {"handshake", "wire", "enclave_response", "asset_file", "chain", "log"} <= channels
    assert len(secrets) == 3


def test_probe_over_many_sessions():
    cfg = default_config(width=16, height=4)
    findings = 0
    for _ in range(100):
        record, secrets = capture_session_record(cfg, frames=1)
        findings += len(key_exfil_probe(record, secrets)[1])
    assert findings == 0


def test_json_report(tmp_path):
    reports = [run_scenario("replay")]
    write_report(reports, tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data[0]["scenario"] == "replay" and data[0]["passed"] is True
