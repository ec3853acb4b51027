"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad keys, dimension mismatches, out-of-range knobs."""


class FormatError(ValueError):
    """Malformed on-disk artifact (IDX, PGM, weight or block-sparse container)."""


class DivergenceError(RuntimeError):
    """The variational optimizer produced a non-finite objective."""
