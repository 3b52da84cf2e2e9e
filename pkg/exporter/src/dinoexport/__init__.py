"""dinoexport: ViT patch-token feature export for volume slices.

Encodes axial slices of a scalar NIfTI-1 volume with a DINOv2/DINOv3/ViT
backbone and writes the patch tokens to an FVB1 feature bank that
feature-space registration tools consume, plus a verifier for the
resulting files.
"""

from .errors import ExportError, FormatError, ModelUnavailable, ShapeMismatch
from .export import ExportConfig, export_features, selected_indices
from .verify import VerifyReport, verify_fvb

__version__ = "0.1.0"

__all__ = [
    "ExportConfig", "ExportError", "FormatError", "ModelUnavailable",
    "ShapeMismatch", "VerifyReport", "export_features", "selected_indices",
    "verify_fvb", "__version__",
]
