"""Exception types shared across the pipeline."""

from __future__ import annotations


class SpatialGenError(Exception):
    """Base class for all pipeline errors."""


# --- graph construction ---------------------------------------------------

class GraphValidationError(SpatialGenError):
    """A spatial knowledge graph failed structural validation."""


class TooFewEntities(GraphValidationError):
    pass


class DuplicateEntityId(GraphValidationError):
    pass


class DanglingEndpoint(GraphValidationError):
    pass


class SelfRelation(GraphValidationError):
    pass


class DuplicatePair(GraphValidationError):
    pass


class EmptyCorpus(SpatialGenError):
    pass


# --- relation semantics ---------------------------------------------------

class UnknownRelation(SpatialGenError):
    """A surface phrase is not present in the synonym table."""


class ConflictingRelation(SpatialGenError):
    """A compound phrase merges two directions or two distances."""


# --- backends ---------------------------------------------------------------

class BackendError(SpatialGenError):
    pass


class BackendUnavailable(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class UnsupportedCapability(BackendError):
    pass


class InsufficientCatalog(BackendError):
    pass


class FetchFailed(BackendError):
    pass


# --- builder ----------------------------------------------------------------

class TooFewObjects(SpatialGenError):
    pass


class EntityCapExceeded(SpatialGenError):
    pass


class DuplicateDescription(SpatialGenError):
    pass


class InconsistentTriplets(SpatialGenError):
    pass


# --- layout and captions ----------------------------------------------------

class InconsistentInput(SpatialGenError):
    """The solver was handed a graph that failed the consistency check."""


class EntityMismatch(SpatialGenError):
    pass


class CaptionMentionsNegative(SpatialGenError):
    pass


class CaptionMissingEntity(SpatialGenError):
    pass


# --- images -----------------------------------------------------------------

class RenderFailed(SpatialGenError):
    pass


# --- qa ---------------------------------------------------------------------

class DistractorCollision(SpatialGenError):
    """Four distinct answer options could not be assembled."""


# --- dataset emission ---------------------------------------------------------

class MissingImage(SpatialGenError):
    pass


class WriteFailure(SpatialGenError):
    pass


class ContaminationDetected(SpatialGenError):
    pass


class InsufficientItems(SpatialGenError):
    pass


# --- evaluation ---------------------------------------------------------------

class DuplicateAnswer(SpatialGenError):
    pass


class UnknownQuestionId(SpatialGenError):
    pass


# --- cli / orchestration --------------------------------------------------------

class ConfigInvalid(SpatialGenError):
    pass


class MissingUpstreamManifest(SpatialGenError):
    pass
