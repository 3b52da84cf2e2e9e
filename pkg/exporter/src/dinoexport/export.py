"""Slice-wise ViT feature export.

Every stride_k-th axial slice (plus the last one, so consumers can
interpolate interior slices from both sides) is min-max normalized,
replicated to 3 channels, resized to the model's input size, pushed
through the encoder in batches, and its patch tokens are written to an
FVB1 file.  Class and register tokens are dropped: the patch tokens are
the trailing grid_w*grid_h entries of the hidden state, emitted y-major
so token n sits at grid cell (n % grid_w, n // grid_w).
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import models, volio
from .errors import ShapeMismatch

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclasses.dataclass(frozen=True)
class ExportConfig:
    model_id: str
    stride_k: int = 2
    input_size: int = 224
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    device: str = "cpu"
    random_weights: bool = False
    seed: int = 0
    batch_size: int = 8

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.stride_k < 1:
            raise ValueError(f"stride_k must be >= 1, got {self.stride_k}")
        if self.input_size < 1:
            raise ValueError(
                f"input_size must be positive, got {self.input_size}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must have 3 channel entries")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std entries must be positive, got {self.std}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def selected_indices(Z: int, stride_k: int) -> list[int]:
    """Slices sent to the encoder: every stride_k-th plus the last."""
    idx = list(range(0, Z, stride_k))
    if idx[-1] != Z - 1:
        idx.append(Z - 1)
    return idx


def preprocess_slice(sl: np.ndarray, cfg: ExportConfig):
    """One (W, H) slice to a normalized (3, input_size, input_size) tensor."""
    import torch
    import torch.nn.functional as F

    lo = float(sl.min())
    hi = float(sl.max())
    span = hi - lo
    if span > 0.0:
        norm = (sl - np.float32(lo)) / np.float32(span)
    else:
        norm = np.zeros_like(sl)
    # rows of the image are the volume's y axis so the row-major patch
    # order of the encoder lands tokens y-major, matching FVB cells
    img = torch.from_numpy(np.ascontiguousarray(norm.T))
    img = img[None, None].expand(1, 3, -1, -1)
    img = F.interpolate(img, size=(cfg.input_size, cfg.input_size),
                        mode="bilinear", align_corners=False)
    mean = torch.tensor(cfg.mean, dtype=torch.float32).view(1, 3, 1, 1)
    std = torch.tensor(cfg.std, dtype=torch.float32).view(1, 3, 1, 1)
    return (img - mean) / std


def load_model(cfg: ExportConfig):
    if cfg.random_weights:
        return models.build_standin(cfg.model_id, cfg.input_size, cfg.seed)
    return models.load_pretrained(cfg.model_id)


def encoder_tag(cfg: ExportConfig) -> str:
    if cfg.random_weights:
        return f"{cfg.model_id}#rand{cfg.seed}"
    return cfg.model_id


def export_features(volume_path: str, cfg: ExportConfig, out_path: str,
                    model=None) -> bytes:
    """Encode a volume to an FVB1 file plus a JSON manifest beside it.

    Pass a preloaded ``model`` triple from load_model() to amortize
    construction over several volumes.
    """
    import torch

    data, _spacing = volio.read_volume(volume_path)
    if data.ndim != 3:
        raise ShapeMismatch(f"expected a 3D volume, got shape {data.shape}")
    W, H, Z = data.shape

    net, patch, width = model if model is not None else load_model(cfg)
    if cfg.input_size % patch != 0:
        raise ShapeMismatch(
            f"input_size {cfg.input_size} is not a multiple of the model "
            f"patch size {patch}")
    gw = gh = cfg.input_size // patch
    n_tok = gw * gh

    idx = selected_indices(Z, cfg.stride_k)
    batches = []
    with torch.no_grad():
        for start in range(0, len(idx), cfg.batch_size):
            chunk = idx[start:start + cfg.batch_size]
            x = torch.cat([preprocess_slice(data[:, :, z], cfg)
                           for z in chunk], dim=0).to(cfg.device)
            hidden = net(pixel_values=x).last_hidden_state
            batches.append(hidden[:, -n_tok:, :].to("cpu", torch.float32))
    feats = torch.cat(batches, dim=0).numpy()

    mask = np.zeros(Z, dtype=bool)
    mask[idx] = True
    payload = np.zeros((Z, n_tok, width), dtype=np.float32)
    payload[idx] = feats

    blob = volio.write_fvb(out_path, Z, gw, gh, width, cfg.stride_k,
                           encoder_tag(cfg), mask, payload)
    manifest = {
        "model_id": cfg.model_id,
        "weights": f"random(seed={cfg.seed})" if cfg.random_weights
                   else "pretrained",
        "patch_size": patch,
        "input_size": cfg.input_size,
        "grid": [gw, gh],
        "D": width,
        "stride_k": cfg.stride_k,
        "encoded_slices": idx,
        "normalize": {"mean": list(cfg.mean), "std": list(cfg.std)},
        "preprocess": "per-slice minmax; gray replicated to 3 channels; "
                      "bilinear resize, align_corners=false",
        "token_order": "y-major, class/register tokens dropped",
    }
    with open(out_path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return blob
