"""End-to-end orchestration: sensor -> CSI-2 wire -> host receiver -> enclave.

The wire is an in-process FIFO of encoded CSI-2 packets. A ``tap`` hook sees
every frame's packet list before delivery, which is where the threat
harness plays attacker; nothing past the wire is ever stubbed.
"""

from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import os
import queue
import random
import threading
import time
from pathlib import Path
from typing import Callable, Iterable

from .csi2 import (
    DT_FRAME_END,
    DT_FRAME_START,
    Csi2Packet,
    TagEnvelope,
    TagKind,
    decode_packet,
    encapsulate_tag,
    reassemble,
    split_payload,
)
from .enclave import Enclave, EnclaveHandshakePort, FixedClock, system_clock
from .errors import FrameRejected, MalformedError, SRAError
from .protection import (
    CipherProfile,
    ProtectedFrame,
    ReplayState,
    SendState,
    TagCarriage,
    protect,
    unprotect,
)
from .provenance import verify_asset
from .sensor import BayerOrder, RawFrame, check_dimensions, generate_frame
from .session import (
    DeviceCertificate,
    Endpoint,
    Identity,
    KeyStore,
    Role,
    drive,
    issue,
    run_handshake,
    make_root,
)

log = logging.getLogger(__name__)

CYCLES_PER_FRAME = 10_000_000
TARGET_FPS = 30


def cycle_budget(cycles_per_frame: int = CYCLES_PER_FRAME, fps: int = TARGET_FPS) -> int:
    """Clock rate a per-frame cycle cost implies at a target frame rate."""
    return cycles_per_frame * fps


def bytes_per_frame(width: int, height: int) -> int:
    return width * height * 10 // 8


@dataclasses.dataclass
class PipelineConfig:
    width: int = 1920
    height: int = 1232
    profile: CipherProfile = CipherProfile.performance_aead
    tag_carriage: TagCarriage = TagCarriage.per_frame
    frames: int = 8
    seed: int = 0
    key_store_path: Path | None = None
    deterministic_test_mode: bool = False
    bayer_order: BayerOrder = BayerOrder.RGGB
    first_counter: int = 1
    fixed_time: int = 1_700_000_000

    def __post_init__(self):
        check_dimensions(self.width, self.height)
        if isinstance(self.profile, str):
            self.profile = CipherProfile[self.profile]
        self.profile = CipherProfile(self.profile)
        self.tag_carriage = TagCarriage(self.tag_carriage)
        self.bayer_order = BayerOrder(self.bayer_order)
        if self.key_store_path is not None:
            self.key_store_path = Path(self.key_store_path)
        if self.frames < 0:
            raise ValueError("frames must be non-negative")

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


# -- outward byte recording ------------------------------------------------------

class SessionRecord:
    """Every byte stream that leaves a trust boundary during a session."""

    def __init__(self):
        self.streams: list[tuple[str, bytes]] = []
        self._lock = threading.Lock()

    def add(self, channel: str, data) -> None:
        if isinstance(data, str):
            data = data.encode("utf-8", "replace")
        with self._lock:
            self.streams.append((channel, bytes(data)))

    def __iter__(self):
        return iter(list(self.streams))

    @contextlib.contextmanager
    def capture_logs(self, logger_name: str = "sra"):
        record = self

        class _Handler(logging.Handler):
            def emit(self, rec):
                record.add("log", self.format(rec))

        handler = _Handler(logging.DEBUG)
        handler.setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
        logger = logging.getLogger(logger_name)
        old_level = logger.level
        logger.addHandler(handler)
        logger.setLevel(logging.DEBUG)
        try:
            yield self
        finally:
            logger.removeHandler(handler)
            logger.setLevel(old_level)


# -- transport glue --------------------------------------------------------------

def packetize(pf: ProtectedFrame, vc: int = 0) -> list[Csi2Packet]:
    """FS, line packets (each followed by its SEP tag if present), FSED tag, FE.

    The per-frame tag packet goes immediately before frame-end.
    """
    packets = split_payload(pf.body, pf.width, pf.height, pf.sequence, vc)
    out = [packets[0]]
    for i, line in enumerate(packets[1:-1]):
        out.append(line)
        if pf.line_tags:
            out.append(encapsulate_tag(
                TagEnvelope(TagKind.per_packet_sep, pf.sequence, pf.line_tags[i]), vc))
    out.append(encapsulate_tag(TagEnvelope(TagKind.per_frame_fsed, pf.sequence, pf.tag), vc))
    out.append(packets[-1])
    return out


def depacketize(packets: Iterable[Csi2Packet], session_id: int, profile: CipherProfile,
                bayer_order=BayerOrder.RGGB) -> ProtectedFrame:
    """Rebuild the ProtectedFrame a host receiver hands to the enclave."""
    r = reassemble(packets)
    fsed = [env for _, env in r.tags if env.tag_kind is TagKind.per_frame_fsed]
    sep = [(idx, env) for idx, env in r.tags if env.tag_kind is TagKind.per_packet_sep]
    if len(fsed) != 1:
        raise MalformedError(f"expected one per-frame tag, found {len(fsed)}")
    seq = fsed[0].sequence
    if (seq & 0xFFFF) != r.frame_number:
        raise MalformedError("frame number does not match tag sequence")
    line_tags: tuple[bytes, ...] = ()
    if sep:
        if [idx for idx, _ in sep] != list(range(r.height)):
            raise MalformedError("per-packet tags do not follow every line")
        if any(env.sequence != seq for _, env in sep):
            raise MalformedError("per-packet tag sequence mismatch")
        line_tags = tuple(env.tag_bytes for _, env in sep)
    return ProtectedFrame(session_id, seq, profile, r.width, r.height, r.data,
                          fsed[0].tag_bytes, line_tags, bayer_order)


class Wire:
    """Ordered byte-packet channel. ``tap(list_of_packets) -> list_of_packets``."""

    def __init__(self, tap: Callable[[list[bytes]], list[bytes]] | None = None,
                 record: SessionRecord | None = None):
        self.tap = tap
        self.record = record
        self._q: queue.Queue = queue.Queue()

    def transmit(self, packets: list[bytes]) -> None:
        if self.tap is not None:
            packets = list(self.tap(list(packets)))
        self.inject(packets)

    def inject(self, packets: Iterable[bytes]) -> None:
        for p in packets:
            if self.record is not None:
                self.record.add("wire", p)
            self._q.put(p)

    def close(self) -> None:
        self._q.put(None)

    def drain(self) -> list[bytes]:
        out = []
        while True:
            try:
                item = self._q.get_nowait()
            except queue.Empty:
                return out
            if item is not None:
                out.append(item)

    def get(self, timeout=None):
        return self._q.get(timeout=timeout)


@dataclasses.dataclass
class Delivery:
    sequence: int | None
    asset_bytes: bytes | None = None
    rejection: str | None = None

    @property
    def accepted(self) -> bool:
        return self.asset_bytes is not None


class HostReceiver:
    """Normal-world CSI-2 receiver: groups packets into frames, forwards to the enclave."""

    def __init__(self, enclave: Enclave, profile: CipherProfile, bayer_order=BayerOrder.RGGB,
                 record: SessionRecord | None = None):
        self.enclave = enclave
        self.profile = CipherProfile(profile)
        self.bayer_order = BayerOrder(bayer_order)
        self.record = record
        self._pending: list[Csi2Packet] | None = None
        self.stage_seconds = {"transport": 0.0}

    def feed(self, raw: bytes) -> Delivery | None:
        t0 = time.perf_counter()
        try:
            pkt, end = decode_packet(raw)
            if end != len(raw):
                raise MalformedError("trailing bytes after packet")
        except MalformedError:
            self._pending = None
            self.stage_seconds["transport"] += time.perf_counter() - t0
            return Delivery(None, rejection="transport_error")
        if pkt.data_type == DT_FRAME_START:
            self._pending = [pkt]
            self.stage_seconds["transport"] += time.perf_counter() - t0
            return None
        if self._pending is None:
            self.stage_seconds["transport"] += time.perf_counter() - t0
            return None
        self._pending.append(pkt)
        if pkt.data_type != DT_FRAME_END:
            self.stage_seconds["transport"] += time.perf_counter() - t0
            return None
        packets, self._pending = self._pending, None
        return self._finish(packets, t0)

    def _finish(self, packets, t0) -> Delivery:
        session_id = self.enclave.session_id
        try:
            pf = depacketize(packets, session_id or 0, self.profile, self.bayer_order)
        except MalformedError as exc:
            log.info("receiver dropped malformed frame: %s", exc)
            self.stage_seconds["transport"] += time.perf_counter() - t0
            return Delivery(None, rejection="transport_error")
        self.stage_seconds["transport"] += time.perf_counter() - t0
        if session_id is None:
            log.info("receiver dropped frame %d: no authenticated session", pf.sequence)
            return Delivery(pf.sequence, rejection="no_session")
        try:
            asset = self.enclave.enclave_capture(pf)
        except FrameRejected as exc:
            return Delivery(pf.sequence, rejection=exc.reason)
        except SRAError as exc:
            return Delivery(pf.sequence, rejection=getattr(exc, "reason", str(exc)))
        data = asset.encode()
        if self.record is not None:
            self.record.add("enclave_response", data)
        return Delivery(pf.sequence, asset_bytes=data)


class SensorNode:
    """Sensor-side endpoint: handshake responder plus frame protection."""

    def __init__(self, identity: Identity, trust_root: DeviceCertificate, config: PipelineConfig,
                 rng: Callable[[int], bytes] = os.urandom):
        self.config = config
        self.endpoint = Endpoint(identity, trust_root, initiator=False, rng=rng,
                                 deterministic=config.deterministic_test_mode)
        self.sender = SendState()
        self.stage_seconds = {"protect": 0.0, "transport": 0.0}

    def emit(self, frame: RawFrame) -> list[bytes]:
        keys = self.endpoint.keys
        if keys is None:
            raise SRAError("sensor has no established session")
        t0 = time.perf_counter()
        pf = protect(frame, keys, self.config.profile, self.sender, self.config.tag_carriage)
        t1 = time.perf_counter()
        out = [p.encode() for p in packetize(pf)]
        self.stage_seconds["protect"] += t1 - t0
        self.stage_seconds["transport"] += time.perf_counter() - t1
        return out


def _rng_for(config: PipelineConfig, role: str) -> Callable[[int], bytes]:
    if config.deterministic_test_mode:
        return random.Random(f"sra-test:{config.seed}:{role}").randbytes
    return os.urandom


class Pipeline:
    """One sensor, one wire, one host enclave."""

    def __init__(self, config: PipelineConfig, host_identity: Identity,
                 sensor_identity: Identity, trust_root: DeviceCertificate,
                 wire_tap=None, record: SessionRecord | None = None):
        self.config = config
        self.record = record
        clock = FixedClock(config.fixed_time) if config.deterministic_test_mode else system_clock
        self.enclave = Enclave(host_identity, trust_root, clock=clock,
                               deterministic=config.deterministic_test_mode,
                               rng=_rng_for(config, "host"), bayer_order=config.bayer_order,
                               profile=config.profile)
        self.sensor = SensorNode(sensor_identity, trust_root, config, _rng_for(config, "sensor"))
        self.wire = Wire(wire_tap, record)
        self.receiver = HostReceiver(self.enclave, config.profile, config.bayer_order, record)

    @classmethod
    def from_key_store(cls, config: PipelineConfig, **kwargs) -> "Pipeline":
        if config.key_store_path is None:
            raise SRAError("config has no key_store_path")
        store = KeyStore(config.key_store_path)
        return cls(config, store.load("host"), store.load("sensor"), store.trust_root(),
                   **kwargs)

    def connect(self, hook=None) -> None:
        rec = (lambda d, m: self.record.add("handshake", m)) if self.record else None
        drive(EnclaveHandshakePort(self.enclave), self.sensor.endpoint, hook, rec)

    def make_frame(self, counter: int) -> RawFrame:
        c = self.config
        return generate_frame(c.seed, c.width, c.height, counter, c.bayer_order)

    def send(self, frame: RawFrame) -> list[bytes]:
        packets = self.sensor.emit(frame)
        self.wire.transmit(packets)
        return packets

    def deliver(self) -> list[Delivery]:
        out = []
        for raw in self.wire.drain():
            d = self.receiver.feed(raw)
            if d is not None:
                out.append(d)
        return out

    def stage_seconds(self) -> dict:
        s = {"protect": self.sensor.stage_seconds["protect"],
             "transport": self.sensor.stage_seconds["transport"]
             + self.receiver.stage_seconds["transport"]}
        for k in ("unprotect", "demosaic", "sign"):
            s[k] = self.enclave.stage_seconds.get(k, 0.0)
        return s


# -- capture -------------------------------------------------------------------------

class CaptureError(SRAError):
    def __init__(self, index: int, reason: str):
        self.index = index
        self.reason = reason
        super().__init__(f"frame {index} failed: {reason}")


@dataclasses.dataclass
class CaptureResult:
    paths: list[Path]
    session_id: int


def capture(config: PipelineConfig, out_dir, threaded: bool = False,
            record: SessionRecord | None = None) -> CaptureResult:
    """Handshake once, then write one verified SRA1 file per frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pipe = Pipeline.from_key_store(config, record=record)
    pipe.connect()
    trust_root = KeyStore(config.key_store_path).trust_root()
    counters = [config.first_counter + i for i in range(config.frames)]

    paths: list[Path] = []

    def handle(index: int, d: Delivery) -> None:
        if not d.accepted:
            raise CaptureError(index, d.rejection or "unknown")
        path = out_dir / f"frame_{d.sequence:08d}.sra"
        path.write_bytes(d.asset_bytes)
        verdict = verify_asset(d.asset_bytes, trust_root)
        if not verdict.valid:
            raise CaptureError(index, "self-verification failed: " + ",".join(verdict.reasons))
        paths.append(path)

    if threaded:
        _capture_threaded(pipe, counters, handle)
    else:
        for index, counter in enumerate(counters):
            pipe.send(pipe.make_frame(counter))
            deliveries = pipe.deliver()
            if len(deliveries) != 1:
                raise CaptureError(index, "frame lost in transport")
            handle(index, deliveries[0])
    log.info("captured %d frames to %s", len(paths), out_dir)
    return CaptureResult(paths, pipe.enclave.session_id)


def _capture_threaded(pipe: Pipeline, counters, handle) -> None:
    """Sensor and host as two workers joined only by the packet queue."""
    errors: list[BaseException] = []

    def sensor_worker():
        try:
            for counter in counters:
                pipe.send(pipe.make_frame(counter))
        except BaseException as exc:
            errors.append(exc)
        finally:
            pipe.wire.close()

    worker = threading.Thread(target=sensor_worker, name="sra-sensor")
    worker.start()
    index = 0
    try:
        while True:
            raw = pipe.wire.get(timeout=60)
            if raw is None:
                break
            d = pipe.receiver.feed(raw)
            if d is not None:
                handle(index, d)
                index += 1
    finally:
        worker.join()
    if errors:
        raise errors[0]
    if index != len(counters):
        raise CaptureError(index, "frame lost in transport")


# -- bench ---------------------------------------------------------------------------

STAGES = ("protect", "transport", "unprotect", "demosaic", "sign")


@dataclasses.dataclass
class BenchReport:
    width: int
    height: int
    profile: str
    mode: str
    bytes_per_frame: int
    frames_processed: int
    wall_seconds: float
    stage_seconds: dict

    @property
    def achieved_fps(self) -> float:
        return self.frames_processed / self.wall_seconds

    @property
    def meets_target(self) -> bool:
        return self.achieved_fps >= TARGET_FPS

    def to_text(self) -> str:
        budget = cycle_budget()
        lines = [
            f"mode={self.mode}",
            f"resolution={self.width}x{self.height}",
            f"profile={self.profile}",
            f"bytes_per_frame={self.bytes_per_frame}",
            f"frames_processed={self.frames_processed}",
            f"wall_seconds={self.wall_seconds:.4f}",
            f"achieved_fps={self.achieved_fps:.2f}",
            f"target_fps={TARGET_FPS}",
            f"meets_target={'yes' if self.meets_target else 'no'}",
        ]
        lines += [f"stage.{k}_seconds={self.stage_seconds.get(k, 0.0):.4f}" for k in STAGES]
        lines.append(f"cycle_budget={CYCLES_PER_FRAME:,} cycles/frame x {TARGET_FPS} fps"
                     f" = {budget:,} cycles/s")
        return "\n".join(lines) + "\n"


def _ephemeral_identities():
    root = make_root("bench-root")
    return (issue(root, "bench-host", Role.host), issue(root, "bench-sensor", Role.sensor),
            root.certificate)


def bench(config: PipelineConfig, frames: int = 100, full: bool = False) -> BenchReport:
    """Sustained throughput at ``config`` resolution.

    The default mode times protect + unprotect only; ``full`` runs the whole
    pipeline (transport, enclave demosaic and signing included). Both use
    the same protect/unprotect functions as :func:`capture`.
    """
    if cycle_budget() != 300_000_000:
        raise AssertionError("cycle budget arithmetic broken")
    host_id, sensor_id, root = _ephemeral_identities()
    cfg = dataclasses.replace(config, key_store_path=None)
    pipe = Pipeline(cfg, host_id, sensor_id, root)
    pipe.connect()
    pool = [pipe.make_frame(i + 1) for i in range(min(4, frames))]

    if full:
        t0 = time.perf_counter()
        for i in range(frames):
            pipe.send(pool[i % len(pool)].with_counter(i + 1))
            for d in pipe.deliver():
                if not d.accepted:
                    raise SRAError(f"bench frame {i} rejected: {d.rejection}")
        wall = time.perf_counter() - t0
        stages = pipe.stage_seconds()
    else:
        hkeys, skeys = run_handshake(host_id, sensor_id, root)
        sender, replay = SendState(), ReplayState()
        stages = dict.fromkeys(STAGES, 0.0)
        t0 = time.perf_counter()
        for i in range(frames):
            frame = pool[i % len(pool)].with_counter(i + 1)
            a = time.perf_counter()
            pf = protect(frame, skeys, cfg.profile, sender, cfg.tag_carriage)
            b = time.perf_counter()
            unprotect(pf, hkeys, replay)
            stages["protect"] += b - a
            stages["unprotect"] += time.perf_counter() - b
        wall = time.perf_counter() - t0
    return BenchReport(cfg.width, cfg.height, cfg.profile.name, "pipeline" if full else "crypto",
                       bytes_per_frame(cfg.width, cfg.height), frames, wall, stages)
