"""Encoder model construction.

Model ids name a ViT family and variant, e.g. "facebook/dinov2-base",
"facebook/dinov3-vitl16-pretrain-lvd1689m", "google/vit-base-patch16-224".
Pretrained weights load through transformers when reachable; a seeded
random-weight stand-in with the same width/patch geometry (depth trimmed
to 2 blocks to stay cheap on CPU) is available when they are not.
"""

from __future__ import annotations

import re

from .errors import ModelUnavailable

# variant width table: vits/vitb/vitl/vitg short codes and spelled names
WIDTHS = {"s": 384, "b": 768, "l": 1024, "g": 1536,
          "small": 384, "base": 768, "large": 1024, "giant": 1536}
STANDIN_LAYERS = 2


def parse_model_id(model_id: str) -> dict:
    """Derive family, hidden width, and patch size from the model id."""
    mid = model_id.lower()
    if "dinov3" in mid:
        family = "dinov3"
    elif "dinov2" in mid:
        family = "dinov2"
    elif "vit" in mid:
        family = "vit"
    else:
        raise ModelUnavailable(
            f"cannot tell the model family of '{model_id}'; expected a "
            "dinov2, dinov3, or vit id")

    m = re.search(r"vit([sblg])", mid)
    if m:
        width = WIDTHS[m.group(1)]
    else:
        for word, w in WIDTHS.items():
            if len(word) > 1 and word in mid:
                width = w
                break
        else:
            width = 384

    m = re.search(r"(?:vit[sblg]|patch)(\d+)", mid)
    if m:
        patch = int(m.group(1))
    else:
        patch = 14 if family == "dinov2" else 16
    return {"family": family, "hidden_size": width, "patch_size": patch}


def build_standin(model_id: str, input_size: int, seed: int):
    """Seeded random-weight model with the named variant's geometry."""
    import torch
    import transformers

    info = parse_model_id(model_id)
    width, patch = info["hidden_size"], info["patch_size"]
    kw = dict(hidden_size=width, num_hidden_layers=STANDIN_LAYERS,
              num_attention_heads=max(1, width // 64),
              intermediate_size=width * 4, image_size=input_size,
              patch_size=patch)
    if info["family"] == "dinov3":
        cfg = transformers.DINOv3ViTConfig(num_register_tokens=4, **kw)
        cls = transformers.DINOv3ViTModel
    elif info["family"] == "dinov2":
        cfg = transformers.Dinov2Config(**kw)
        cls = transformers.Dinov2Model
    else:
        cfg = transformers.ViTConfig(**kw)
        cls = transformers.ViTModel
    torch.manual_seed(seed)
    model = cls(cfg).eval()
    return model, patch, width


def load_pretrained(model_id: str):
    """Load published weights; raises ModelUnavailable when unreachable."""
    import transformers

    parse_model_id(model_id)  # reject ids from unsupported families early
    try:
        model = transformers.AutoModel.from_pretrained(model_id)
    except Exception as exc:  # hub/network/config failures all end up here
        raise ModelUnavailable(
            f"could not load weights for '{model_id}' ({exc}); pass "
            "--random-weights for a stand-in") from exc
    model = model.eval()
    patch = int(model.config.patch_size)
    width = int(model.config.hidden_size)
    return model, patch, width
