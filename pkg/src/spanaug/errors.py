"""Exception taxonomy shared across the package.

Every recoverable failure mode has its own type so callers can count, skip,
or retry by class instead of string-matching messages.
"""


class SpanAugError(Exception):
    """Base class for all package errors."""


# --- corpus / schema ---------------------------------------------------------

class MalformedLineError(SpanAugError):
    """A corpus line is not 'token tag' or the tag is not BIO2-shaped."""


class UnknownTagError(SpanAugError):
    """A BIO tag references an entity type the schema does not define."""


class InvalidBioTransitionError(SpanAugError):
    """An I- tag continues a span that is not open (strict mode only)."""


class SchemaError(SpanAugError):
    """A schema file or schema/dataset pairing violates its invariants."""


# --- linearized text ---------------------------------------------------------

class UnknownTypeError(SpanAugError):
    """A sentence references a type id missing from the schema."""


class UnknownDisplayNameError(SpanAugError):
    """A bracketed group names a type the schema cannot resolve."""


class UnbalancedBracketsError(SpanAugError):
    """Group brackets do not pair up in linearized text."""


class MissingSeparatorError(SpanAugError):
    """A bracketed group has no (or more than one) type separator."""


class EmptyEntityError(SpanAugError):
    """A bracketed group contains no entity tokens."""


# --- mask operations / strategies --------------------------------------------

class NoEntityError(SpanAugError):
    """An entity-targeting op found no eligible entity segment."""


class NoContextError(SpanAugError):
    """A context-targeting op found no untouched context tokens."""


class SameTypeError(SpanAugError):
    """A type flip resolved to the entity's current type."""


class OverlapExhaustedError(SpanAugError):
    """Composition ran out of eligible targets mid-sequence."""


class InvalidKMError(SpanAugError):
    """Flip count is incompatible with the entity-rounds choice set."""


class SingletonSchemaError(SpanAugError):
    """A type flip was requested but the schema has only one type."""


class MissingEmbeddingsError(SpanAugError):
    """A similarity-based flip scheme needs embeddings the schema lacks."""


# --- gateway -----------------------------------------------------------------

class GatewayError(SpanAugError):
    """Base class for backend/gateway failures."""


class BackendUnavailableError(GatewayError):
    """The backend cannot be reached or is not in a servable state."""


class UnparseableGenerationError(GatewayError):
    """A generation failed re-validation (parse, types, or empty fill)."""


class SlotMismatchError(GatewayError):
    """A response's slot structure does not match its request."""


# --- mixup -------------------------------------------------------------------

class DimensionMismatchError(SpanAugError):
    """Paired state/label sequences disagree in shape."""


class MissingParentError(SpanAugError):
    """A flipped sample's parent sentence is not available for pairing."""


# --- evaluation / pipeline ---------------------------------------------------

class IdMismatchError(SpanAugError):
    """Gold and predicted datasets cover different sentence ids."""


class ConfigError(SpanAugError):
    """A run configuration is malformed or inconsistent."""
