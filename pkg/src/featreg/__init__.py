"""Training-free deformable 3D registration on patch-token features.

Volumes are decomposed into axial slices, each slice is summarized as a
grid of patch descriptors, the descriptors of both images are jointly
reduced with a shared PCA basis, and a displacement field is estimated
on the resulting feature volumes by discrete convex search followed by
first-order refinement.
"""
from .errors import (
    BadMagic,
    ChannelMismatch,
    DimsMismatch,
    EmptyMask,
    FeatregError,
    FormatError,
    IncompleteStack,
    MissingBoundarySlice,
    NonFiniteLoss,
    RankDeficient,
    RejectionExhausted,
    SizeMismatch,
    SliceTooSmall,
    TruncatedPayload,
    UnsupportedDatatype,
    VolumeTooSmall,
)
from .kernels import backend_name
from .volcore import (
    DisplacementField,
    FeatureVolume,
    LabelVolume,
    Spacing,
    Volume3D,
    resample_field,
    resample_to_shape,
    sample_linear,
    sample_nearest,
    warp_volume,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagic",
    "ChannelMismatch",
    "DimsMismatch",
    "DisplacementField",
    "EmptyMask",
    "FeatregError",
    "FeatureVolume",
    "FormatError",
    "IncompleteStack",
    "LabelVolume",
    "MissingBoundarySlice",
    "NonFiniteLoss",
    "RankDeficient",
    "RejectionExhausted",
    "SizeMismatch",
    "SliceTooSmall",
    "Spacing",
    "TruncatedPayload",
    "UnsupportedDatatype",
    "Volume3D",
    "VolumeTooSmall",
    "backend_name",
    "resample_field",
    "resample_to_shape",
    "sample_linear",
    "sample_nearest",
    "warp_volume",
    "__version__",
]
