"""Mutual authentication between host and sensor, then a protected frame."""

import dataclasses

from sra.errors import FrameRejected
from sra.protection import CipherProfile, ReplayState, protect, unprotect
from sra.sensor import generate_frame
from sra.session import Role, issue, make_root, run_handshake

root = make_root("demo-root")
host = issue(root, "demo-host", Role.host)
sensor = issue(root, "demo-sensor", Role.sensor)

host_keys, sensor_keys = run_handshake(host, sensor, root.certificate)
print("session", hex(host_keys.session_id), "keys agree:", host_keys == sensor_keys)

replay = ReplayState()
for profile in CipherProfile:
    frame = generate_frame(2, 64, 16, counter=10 + profile)
    pf = protect(frame, sensor_keys, profile)
    print(profile.cipher_name, "body differs from plaintext:", pf.body != frame.packed())
    print("  unprotected:", unprotect(pf, host_keys, replay) == frame)

# stale sequence
try:
    unprotect(pf, host_keys, replay)
except FrameRejected as exc:
    print("second delivery:", exc.reason)

# tampered body, fresh replay state so only the tag decides
bad = dataclasses.replace(pf, body=bytes([pf.body[0] ^ 4]) + pf.body[1:])
try:
    unprotect(bad, host_keys, ReplayState())
except FrameRejected as exc:
    print("tampered body:", exc.reason)
