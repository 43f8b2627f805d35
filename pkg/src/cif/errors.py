"""Exception hierarchy. Every error raised by the library derives from CifError."""


class CifError(Exception):
    pass


# file formats
class BadMagic(CifError, ValueError):
    pass


class TruncatedFile(CifError, ValueError):
    pass


class NonFiniteValue(CifError, ValueError):
    pass


class VersionUnsupported(CifError, ValueError):
    pass


class IoFailure(CifError, OSError):
    pass


class AllDepthMissing(CifError, ValueError):
    pass


class InvalidConfig(CifError, ValueError):
    pass


# hypergraph
class TooFewPoints(CifError, ValueError):
    pass


class TooFewForeground(CifError, ValueError):
    pass


class EmptyHyperedge(CifError, ValueError):
    pass


class DegenerateHypergraph(CifError, ValueError):
    pass


# memory
class EmptyBucket(CifError, ValueError):
    pass


class DimMismatch(CifError, ValueError):
    pass


class EmptyInput(CifError, ValueError):
    pass


# message passing
class KTooLarge(CifError, ValueError):
    pass


class ShapeMismatch(CifError, ValueError):
    pass


class EmptySet(CifError, ValueError):
    pass


class DegenerateCloud(CifError, ValueError):
    pass


# search / eval
class EmptyBank(CifError, ValueError):
    pass


class LengthMismatch(CifError, ValueError):
    pass


class SingleClass(CifError, ValueError):
    pass


class NoAnomalousPixels(CifError, ValueError):
    pass
