"""Exception hierarchy shared by all subsystems."""


class StegoError(Exception):
    """Base class for every error raised by this package."""


class EmptyContext(StegoError):
    pass


class ContextOverflow(StegoError):
    pass


class UnknownToken(StegoError):
    pass


class MalformedSequence(StegoError):
    pass


class ShapeError(StegoError):
    pass


class UseEmbeddingPath(StegoError):
    """A soft bridge was passed to a token-level window builder."""


class PrecisionExhausted(StegoError):
    """Distribution support is too large for the coder's frequency budget."""


class ExtractionDesync(StegoError):
    """Extractor observed a token outside its reconstructed support.

    Signals that Alice's and Bob's inference diverged (an in-window attack
    or a session-config mismatch).
    """

    def __init__(self, step, token):
        super().__init__(f"extraction desync at step {step} (token {token})")
        self.step = step
        self.token = token


class CapacityExhausted(StegoError):
    """Generation terminated before the full payload was committed."""

    def __init__(self, bits_embedded, bits_needed):
        super().__init__(
            f"only {bits_embedded} of {bits_needed} payload bits committed "
            f"before generation ended"
        )
        self.bits_embedded = bits_embedded
        self.bits_needed = bits_needed


class FramingError(StegoError):
    pass


class DomainError(StegoError):
    pass


class TooLarge(StegoError):
    pass


class TrainingDiverged(StegoError):
    pass


class NumericalError(StegoError):
    pass


class ConfigError(StegoError):
    pass
