"""Protect+unprotect throughput at full resolution, then the whole pipeline."""

from sra.pipeline import PipelineConfig, bench
from sra.protection import CipherProfile, TagCarriage

for profile in CipherProfile:
    for carriage in TagCarriage:
        cfg = PipelineConfig(profile=profile, tag_carriage=carriage)
        r = bench(cfg, frames=60)
        print(f"{profile.name:27s} {carriage.value:10s} {r.achieved_fps:7.1f} fps")

# transport, demosaic and signing included; far below the crypto-only rate
print(bench(PipelineConfig(), frames=10, full=True).to_text())
