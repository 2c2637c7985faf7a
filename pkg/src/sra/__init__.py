"""Signed-at-capture secure imaging pipeline, simulated end to end."""

from .csi2 import (
    Csi2Packet,
    PacketHeader,
    TagEnvelope,
    TagKind,
    encapsulate_tag,
    extract_tag,
    payload_crc,
    reassemble,
    split_frame,
)
from .isp import demosaic
from .enclave import Enclave, EnclaveRequest, EnclaveResponse, FixedClock
from .errors import (
    DimensionError,
    EnclaveError,
    FrameRejected,
    HandshakeError,
    MalformedError,
    SRAError,
)
from .pipeline import BenchReport, Pipeline, PipelineConfig, bench, capture
from .protection import (
    CipherProfile,
    ProtectedFrame,
    ReplayState,
    TagCarriage,
    nonce_for,
    protect,
    unprotect,
)
from .provenance import Manifest, SignedAsset, Verdict, build_manifest, verify_asset
from .sensor import BayerOrder, RawFrame, generate_frame, pack_raw10, unpack_raw10
from .session import (
    DeviceCertificate,
    Identity,
    KeyStore,
    SessionKeys,
    derive_keys,
    keygen,
    run_handshake,
    verify_chain,
)

__version__ = "0.1.0"
