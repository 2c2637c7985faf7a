"""Exception hierarchy shared by the pipeline modules."""


class SRAError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SRAError, ValueError):
    """Frame geometry violates RAW10 / Bayer alignment rules."""


class EncodingError(SRAError, ValueError):
    """A value cannot be encoded into its wire representation."""


class MalformedError(SRAError, ValueError):
    """Bytes could not be parsed into the expected structure."""


class MalformedTagError(MalformedError):
    """A 0x24 packet whose payload does not carry the 0x0B tag marker."""


class ProtocolError(SRAError):
    """Sender-side misuse, e.g. reusing a frame counter within a session."""


class HandshakeError(SRAError):
    """Mutual authentication failed.

    ``phase`` is the handshake phase the failing endpoint was in, ``reason``
    a short machine-readable token and ``link`` the index of the failing
    certificate when the failure came from chain validation.
    """

    def __init__(self, phase, reason, link=None, detail=""):
        self.phase = phase
        self.reason = reason
        self.link = link
        self.detail = detail
        msg = f"handshake failed in phase {phase}: {reason}"
        if link is not None:
            msg += f" (certificate link {link})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class FrameRejected(SRAError):
    """A protected frame was refused by the receiver.

    ``reason`` is one of ``tag_mismatch``, ``replay_rejected``,
    ``session_mismatch``.
    """

    def __init__(self, reason, sequence=None):
        self.reason = reason
        self.sequence = sequence
        super().__init__(f"frame rejected ({reason}), sequence={sequence}")


class EnclaveError(SRAError):
    """Raised by the simulated enclave; carries no image-bearing data."""

    def __init__(self, reason, detail=""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ManifestRefused(SRAError):
    """Manifest construction refused because the capture was not authenticated."""
