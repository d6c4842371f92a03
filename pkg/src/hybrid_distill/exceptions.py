"""Exception hierarchy shared by every module of the package."""


class HybridDistillError(Exception):
    """Base class for all errors raised by this package."""


class InputDomainError(HybridDistillError, ValueError):
    """An argument is outside the domain of the operation (NaN logits, bad K, gamma > 1...)."""


class ShapeError(HybridDistillError, ValueError):
    """Vector lengths disagree."""


class ConfigError(HybridDistillError, ValueError):
    """Incompatible policies, unknown presets/reward kinds, invalid config files."""


class HorizonError(HybridDistillError, ValueError):
    """A context prefix is not shorter than the policy horizon."""


class ResourceError(HybridDistillError, RuntimeError):
    """Exhaustive enumeration would exceed the configured sequence cap."""


class ContractBreach(HybridDistillError, AssertionError):
    """A verification suite found a residual above its contract tolerance."""
