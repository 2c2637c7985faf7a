"""Frames go into the enclave; only signed assets come out."""

from sra.enclave import Enclave, EnclaveHandshakePort, FixedClock
from sra.protection import protect
from sra.provenance import AssertionKind, verify_asset
from sra.sensor import generate_frame
from sra.session import Endpoint, Role, drive, issue, make_root

root = make_root("demo-root")
host = issue(root, "demo-host", Role.host)
sensor = issue(root, "demo-sensor", Role.sensor)

enclave = Enclave(host, root.certificate, clock=FixedClock())
sensor_end = Endpoint(sensor, root.certificate, initiator=False)
drive(EnclaveHandshakePort(enclave), sensor_end)

frame = generate_frame(3, 64, 48, counter=1)
asset = enclave.enclave_capture(protect(frame, sensor_end.keys))

for a in asset.manifest.assertions:
    print(a.kind.name, a.as_dict())

verdict = verify_asset(asset, root.certificate)
print(verdict.report())

# a single pixel edit after signing
payload = bytearray(asset.image_payload)
payload[-1] ^= 0x80
edited = asset.__class__(bytes(payload), asset.manifest)
print(verify_asset(edited, root.certificate).report())
