"""Exception hierarchy shared across the package."""


class EngineError(Exception):
    """Base class for every error raised by segproof."""


class ManifestError(EngineError):
    """Dataset manifest is malformed (bad JSON, missing fields, duplicate indices)."""


class ConfigError(EngineError):
    """EngineConfig violates one of its invariants."""


class MissingFile(EngineError):
    """A file referenced by a manifest does not exist."""


class SizeMismatch(EngineError):
    """A raw label blob has the wrong byte length for its declared geometry."""


class GeometryMismatch(EngineError):
    """Arrays or sections that must share dimensions do not."""


class IoFailure(EngineError):
    """Write failed (permissions, disk)."""


class InvalidPair(EngineError):
    """A label pair is degenerate (a == b) or one id is absent from the map."""


class SeedOutsideRegion(EngineError):
    """A watershed seed is not inside the flood region (or unreachable within it)."""


class IdenticalSeeds(EngineError):
    """Both watershed seeds name the same pixel."""


class ShapeMismatch(EngineError):
    """Tensor shapes do not match the network architecture."""


class EmptyTrainingSet(EngineError):
    """Training requested on a set with no patches."""


class EmptySet(EngineError):
    """Scoring requested on an empty patch set."""


class VersionMismatch(EngineError):
    """Checkpoint header declares an unsupported format version."""


class CorruptBlob(EngineError):
    """Checkpoint payload is truncated or inconsistent with its header."""


class MissingGroundTruth(EngineError):
    """An operation that needs gt_labels was given a section without them."""


class DegenerateSegment(EngineError):
    """Segment too small/thin to place two distinct watershed seeds."""


class StaleCandidate(EngineError):
    """A correction refers to segments that no longer exist in the label map."""


class IdCollision(EngineError):
    """A fresh segment id is already in use."""


class GroundTruthRequired(EngineError):
    """Oracle decisions need ground truth on every section."""


class EmptyOverlap(EngineError):
    """All pixels were excluded from a metric computation."""


class DegenerateLabels(EngineError):
    """ROC needs both classes present."""


class InfeasibleCorruption(EngineError):
    """Requested more planted errors than the section can host."""


class NoCandidates(EngineError):
    """A session was requested for a dataset that yields no candidates."""


class SessionNotFound(EngineError):
    """Unknown session id."""


class StaleCursor(EngineError):
    """A decision was posted for a candidate that is not the session cursor."""
