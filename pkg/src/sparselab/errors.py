"""Exception types shared across the package."""


class SparselabError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(SparselabError):
    """Architecture or experiment configuration is inconsistent."""


class DimensionError(SparselabError):
    """Runtime tensor shape does not match what a layer expects."""


class FormatError(SparselabError):
    """A dataset file does not follow its declared binary layout."""


class StateError(SparselabError):
    """Checkpoint or mask state is incompatible with the target network."""


class PersistenceError(SparselabError):
    """A persisted artifact is corrupt or from an incompatible version."""


class SelectionError(SparselabError):
    """A report selected runs that cannot be compared (seeds, arch, dataset)."""
