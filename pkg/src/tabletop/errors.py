"""Exception types shared across the package."""


class TabletopError(Exception):
    """Base class for all package errors."""


class SchemaError(TabletopError, ValueError):
    """A layout document is missing a field or has a field of the wrong type."""


class UnitError(TabletopError, ValueError):
    """A physical quantity is out of its valid range (e.g. non-positive size)."""


class LengthMismatch(TabletopError, ValueError):
    """A pose vector does not match the number of objects in a scene."""


class ConfigError(TabletopError, ValueError):
    pass


class DegenerateMesh(TabletopError, ValueError):
    pass


class NonWatertight(TabletopError, ValueError):
    pass


class AssetMissing(TabletopError, KeyError):
    pass


class NonFiniteLoss(TabletopError, FloatingPointError):
    pass


class NonFiniteState(TabletopError, FloatingPointError):
    pass


class ProviderError(TabletopError):
    """The reasoner backend failed to produce a usable proposal."""

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class AuthError(ProviderError):
    pass


class EmptyProposal(TabletopError):
    pass


class DslParseError(TabletopError, ValueError):
    pass


class DiffConflict(TabletopError, ValueError):
    pass


class EmptyGroundTruth(TabletopError, ValueError):
    pass


class CategoryMismatch(TabletopError, ValueError):
    pass


class GenerationTimeout(TabletopError, RuntimeError):
    pass


class NoTaskObjects(TabletopError, ValueError):
    pass
