"""Each attack scenario against the full pipeline, and the key leak probe."""

from sra.harness import capture_session_record, default_config, key_exfil_probe, run_all

for report in run_all(default_config()):
    print(report.line())

record, secrets = capture_session_record(default_config(width=32, height=8), frames=2)
outcome, findings = key_exfil_probe(record, secrets)
print(outcome.name, len(findings))
