"""Exception taxonomy shared across the toolchain."""


class CollageForgeError(Exception):
    """Base class for all toolchain errors."""


class EmptyCombo(CollageForgeError):
    """A substrate combo ended up with no codes after normalization."""


class ParseError(CollageForgeError):
    """A label file or manifest record could not be parsed.

    Carries file/line context so CLI diagnostics can point at the offending
    record.
    """

    def __init__(self, message: str, *, path=None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class OverlapError(CollageForgeError):
    """Two substrate intervals of the same video overlap."""


class MissingFrameImage(CollageForgeError):
    """A bounding box references a frame with no image on disk."""


class NoBackgrounds(CollageForgeError):
    """Substrate resolution was asked to pick from an empty candidate set."""


class Unsatisfiable(CollageForgeError):
    """The synthesis request cannot be met with the indexed data."""


class DimensionMismatch(CollageForgeError):
    """A stored image's pixel size disagrees with its manifest entry."""


class SpeciesMismatch(CollageForgeError):
    """Two manifests map the same species name to conflicting metadata."""
