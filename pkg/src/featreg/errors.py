"""Exception types shared across the package.

Grid/shape violations raise the specific subclasses below rather than bare
ValueErrors so callers (and the CLI exit-code mapping) can tell input
problems from numerical failures.
"""


class FeatregError(Exception):
    """Base class for all package-specific errors."""


class DimsMismatch(FeatregError):
    """Two grids that must match have different dims."""


class ChannelMismatch(FeatregError):
    """Feature channel dimensions disagree."""


class SliceTooSmall(FeatregError):
    """A 2D slice is smaller than the encoder's patch size."""


class MissingBoundarySlice(FeatregError):
    """First or last slice of a feature stack was never encoded."""


class IncompleteStack(FeatregError):
    """A feature stack still contains non-encoded slices."""


class RankDeficient(FeatregError):
    """Too few rows to fit a projection."""


class EmptyMask(FeatregError):
    """A surface-distance metric was asked for an empty mask."""


class VolumeTooSmall(FeatregError):
    """A grid is too small for interior finite differences."""


class NonFiniteLoss(FeatregError):
    """The objective became NaN/inf during refinement (divergent step)."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"loss became non-finite at iteration {iteration}")


class RejectionExhausted(FeatregError):
    """No fold-free synthetic field found within the draw budget."""


class FormatError(FeatregError):
    """Base class for file-format errors; carries the offending field."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"{self.__class__.__name__}: field '{field}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class BadMagic(FormatError):
    """Malformed header structure (magic, size field, dim block)."""


class UnsupportedDatatype(FormatError):
    """Datatype code outside the supported subset."""


class TruncatedPayload(FormatError):
    """Payload byte count disagrees with the header arithmetic."""


class SizeMismatch(FormatError):
    """Feature-stack payload disagrees with its header arithmetic."""
