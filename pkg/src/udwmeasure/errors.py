"""Exception hierarchy shared by all modules."""


class UdwError(Exception):
    """Base class for library errors."""


class ConfigurationError(UdwError):
    """Invalid physical or numerical configuration."""


class UnsupportedConfiguration(ConfigurationError):
    """A valid configuration that this backend cannot evaluate."""


class GeometryError(ConfigurationError):
    """Violated causal relation between interaction regions."""


class NumericGuardError(UdwError):
    """A numeric guard tripped (non-convergence, bad conditioning, ...)."""


class ZeroProbabilityError(NumericGuardError):
    """The conditioning outcome has (numerically) vanishing probability."""


class PerturbativeValidityError(NumericGuardError):
    """The perturbative expansion produced an unphysical value."""


class StiffnessError(NumericGuardError):
    """Time integration failed to make progress."""
