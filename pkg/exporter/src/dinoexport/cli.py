"""Command line interface.

    dinoexport export volume.nii --model ID --stride K --input-size S \
        --out features.fvb [--random-weights] [--seed N]
    dinoexport verify features.fvb volume.nii

Exit codes: 0 success, 1 verification failures, 2 bad inputs.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError


def _triple(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected 3 comma-separated values, got '{text}'")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dinoexport",
        description="export ViT patch-token features from volume slices")
    sub = ap.add_subparsers(dest="verb", required=True)

    ex = sub.add_parser("export", help="encode slices to an FVB1 file")
    ex.add_argument("volume", help="scalar NIfTI-1 volume")
    ex.add_argument("--model", required=True,
                    help="model id, e.g. facebook/dinov2-base")
    ex.add_argument("--stride", type=int, default=2, metavar="K",
                    help="encode every K-th slice plus the last")
    ex.add_argument("--input-size", type=int, default=224, metavar="S",
                    help="square model input resolution")
    ex.add_argument("--out", required=True, help="output FVB1 path")
    ex.add_argument("--mean", type=_triple, default=None,
                    help="channel means, comma triple")
    ex.add_argument("--std", type=_triple, default=None,
                    help="channel stds, comma triple")
    ex.add_argument("--device", default="cpu")
    ex.add_argument("--random-weights", action="store_true",
                    help="seeded stand-in weights instead of published ones")
    ex.add_argument("--seed", type=int, default=0,
                    help="stand-in weight seed")
    ex.add_argument("--batch", type=int, default=8,
                    help="slices per inference batch")
    ex.add_argument("--threads", type=int, default=1,
                    help="torch CPU threads")

    ve = sub.add_parser("verify", help="check an FVB1 file against a volume")
    ve.add_argument("fvb", help="FVB1 file to check")
    ve.add_argument("volume", help="volume it should describe")
    return ap


def cmd_export(args) -> int:
    import torch

    from .export import ExportConfig, export_features

    torch.set_num_threads(max(1, args.threads))
    kw = {}
    if args.mean is not None:
        kw["mean"] = args.mean
    if args.std is not None:
        kw["std"] = args.std
    cfg = ExportConfig(model_id=args.model, stride_k=args.stride,
                       input_size=args.input_size, device=args.device,
                       random_weights=args.random_weights, seed=args.seed,
                       batch_size=args.batch, **kw)
    export_features(args.volume, cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import verify_fvb

    report = verify_fvb(args.fvb, args.volume)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "export":
            return cmd_export(args)
        return cmd_verify(args)
    except (ExportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
