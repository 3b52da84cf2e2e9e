"""Command-line front end.

Verbs: synth, extract, register, warp, evaluate, montage.  Flags mirror
the config dataclasses one to one.  Exit codes: 0 on success, 2 for
input/format problems, 3 for numerical failures during refinement.

cmd_register writes three files: the displacement field (disp.nii), the
loss trace (trace.json), and a manifest capturing config, input hashes
and timings.  Runs with --threads 1 and a fixed seed are bitwise
reproducible; manifest timing values are the one documented exception.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .encoder import EncoderConfig, encode_volume
from .errors import FeatregError, NonFiniteLoss, SizeMismatch
from .metrics import evaluate
from .montage import montage_checker, montage_diff, montage_logj, write_pgm
from .nifti_io import read_fvb, read_nifti, write_fvb, write_nifti
from .registration import RegistrationConfig, register
from .synth import generate_case
from .volcore import DisplacementField, LabelVolume, Volume3D, warp_volume

MANIFEST_SCHEMA = 1


def _read_file(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _load_nifti(path: str):
    try:
        return read_nifti(_read_file(path))
    except FeatregError as exc:
        exc.args = (f"{path}: {exc.args[0]}",) if exc.args else (path,)
        raise


def _as_volume(obj) -> Volume3D:
    if isinstance(obj, Volume3D):
        return obj
    if isinstance(obj, LabelVolume):
        return Volume3D(obj.data.astype(np.float64), obj.spacing)
    raise SizeMismatch("dim", "expected a scalar volume, found a vector field")


def _as_labels(obj, path: str) -> LabelVolume:
    if isinstance(obj, LabelVolume):
        return obj
    raise SizeMismatch("datatype", f"{path} does not hold an integer label volume")


def _as_field(obj, path: str) -> DisplacementField:
    if isinstance(obj, DisplacementField):
        return obj
    raise SizeMismatch("dim", f"{path} does not hold a displacement field")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    case = generate_case(seed=args.seed, dims=tuple(args.dims),
                         n_blobs=args.n_blobs,
                         warp_amplitude=args.warp_amplitude,
                         warp_smoothness=args.warp_smoothness)
    os.makedirs(args.out_dir, exist_ok=True)
    names = {
        "fix.nii": case.fix,
        "mov.nii": case.mov,
        "fix_labels.nii": case.fix_labels,
        "mov_labels.nii": case.mov_labels,
        "truth_disp.nii": case.truth,
    }
    for name, vol in names.items():
        write_nifti(vol, os.path.join(args.out_dir, name))
    print(f"synth: wrote {len(names)} files to {args.out_dir}")
    return 0


def cmd_extract(args) -> int:
    vol = _as_volume(_load_nifti(args.input))
    if args.encoder == "file":
        if not args.features:
            raise SizeMismatch("features", "--encoder file requires --features")
        stack = read_fvb(_read_file(args.features))
        if stack.Z != vol.dims[2]:
            raise SizeMismatch(
                "Z", f"feature file has {stack.Z} slices, volume has {vol.dims[2]}")
    else:
        cfg = EncoderConfig(stride_k=args.stride, patch_size=args.patch_size)
        stack = encode_volume(vol, cfg)
    write_fvb(stack, args.output)
    print(f"extract: {stack.n_encoded}/{stack.Z} encoded slices, "
          f"grid {stack.grid_w}x{stack.grid_h}, D={stack.D} -> {args.output}")
    return 0


def _registration_config(args) -> RegistrationConfig:
    return RegistrationConfig(
        lambda_=args.lambda_, levels=args.levels,
        capture_radius=args.capture_radius, quant_step=args.quant_step,
        cc_iters=args.cc_iters, smooth_radius=args.smooth_radius,
        refine_iters=args.refine_iters, step_size=args.step_size,
        beta1=args.beta1, beta2=args.beta2, eps=args.eps)


def cmd_register(args) -> int:
    t0 = time.perf_counter()
    fix_bytes = _read_file(args.fix)
    mov_bytes = _read_file(args.mov)
    fix = _as_volume(read_nifti(fix_bytes))
    mov = _as_volume(read_nifti(mov_bytes))
    inputs = {
        "fix": {"path": args.fix, "sha256": _sha256(fix_bytes)},
        "mov": {"path": args.mov, "sha256": _sha256(mov_bytes)},
    }

    stacks = {}
    for key, path in (("fix", args.fix_feat), ("mov", args.mov_feat)):
        if path:
            blob = _read_file(path)
            stack = read_fvb(blob)
            vol = fix if key == "fix" else mov
            if stack.Z != vol.dims[2]:
                raise SizeMismatch(
                    "Z", f"{path} has {stack.Z} slices, volume has {vol.dims[2]}")
            stacks[key] = stack
            inputs[f"{key}_feat"] = {"path": path, "sha256": _sha256(blob)}
    t_load = time.perf_counter() - t0

    kernels.set_num_threads(args.threads)
    enc_cfg = EncoderConfig(stride_k=args.stride, patch_size=args.patch_size)
    reg_cfg = _registration_config(args)

    t1 = time.perf_counter()
    disp, trace = register(fix, mov, enc_cfg=enc_cfg, reg_cfg=reg_cfg,
                           pca_dim=args.pca_dim,
                           stack_fix=stacks.get("fix"),
                           stack_mov=stacks.get("mov"))
    t_register = time.perf_counter() - t1

    t2 = time.perf_counter()
    os.makedirs(args.out_dir, exist_ok=True)
    disp_path = os.path.join(args.out_dir, "disp.nii")
    trace_path = os.path.join(args.out_dir, "trace.json")
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    write_nifti(disp, disp_path)
    _write_json(trace_path, [
        {"iteration": i, **entry.as_dict()} for i, entry in enumerate(trace)])
    t_write = time.perf_counter() - t2

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "backend": kernels.backend_name(),
        "threads": args.threads,
        "seed": args.seed,
        "config": {
            "encoder": {"stride_k": enc_cfg.stride_k,
                        "patch_size": enc_cfg.patch_size,
                        "encoder_id": enc_cfg.encoder_id},
            "registration": {
                "lambda": reg_cfg.lambda_, "levels": reg_cfg.levels,
                "capture_radius": reg_cfg.capture_radius,
                "quant_step": reg_cfg.quant_step,
                "cc_iters": reg_cfg.cc_iters,
                "smooth_radius": reg_cfg.smooth_radius,
                "refine_iters": reg_cfg.refine_iters,
                "step_size": reg_cfg.step_size,
                "beta1": reg_cfg.beta1, "beta2": reg_cfg.beta2,
                "eps": reg_cfg.eps},
            "pca_dim": args.pca_dim,
        },
        "inputs": inputs,
        "outputs": {"disp": disp_path, "trace": trace_path},
        "timings_s": {"load": round(t_load, 6), "register": round(t_register, 6),
                      "write": round(t_write, 6)},
    }
    _write_json(manifest_path, manifest)
    print(f"register: total loss {trace[0].total:.6g} -> {trace[-1].total:.6g} "
          f"({len(trace) - 1} refine steps) -> {disp_path}")
    return 0


def cmd_warp(args) -> int:
    vol = _load_nifti(args.input)
    if isinstance(vol, DisplacementField):
        raise SizeMismatch("dim", "cannot warp a displacement field")
    disp = _as_field(_load_nifti(args.disp), args.disp)
    interp = args.interp
    if interp == "auto":
        interp = "nearest" if isinstance(vol, LabelVolume) else "linear"
    warped = warp_volume(vol, disp, interp=interp)
    write_nifti(warped, args.output)
    print(f"warp: {args.input} by {args.disp} ({interp}) -> {args.output}")
    return 0


def _metric_rows(case: str, report) -> list[dict]:
    rows = []
    for lab in sorted(report.per_label_dice):
        rows.append({
            "case": case, "label": lab,
            "dice": report.per_label_dice[lab],
            "hd95_mm": report.per_label_hd95[lab],
            "sdlogj": report.sdlogj,
            "folding_fraction": report.folding_fraction,
        })
    rows.append({
        "case": case, "label": "mean",
        "dice": report.mean_dice, "hd95_mm": report.mean_hd95,
        "sdlogj": report.sdlogj, "folding_fraction": report.folding_fraction,
    })
    return rows


def cmd_evaluate(args) -> int:
    fix_labels = _as_labels(_load_nifti(args.fix_labels), args.fix_labels)
    mov_labels = _as_labels(_load_nifti(args.mov_labels), args.mov_labels)
    disp = _as_field(_load_nifti(args.disp), args.disp)
    labels = _int_list(args.labels) if args.labels else None

    zero = DisplacementField.zeros(fix_labels.dims, fix_labels.spacing)
    initial = evaluate(fix_labels, mov_labels, zero, labels)
    warped = evaluate(fix_labels, mov_labels, disp, labels)

    payload = {
        "case": args.case,
        "initial": initial.as_dict(),
        "warped": warped.as_dict(),
    }
    _write_json(args.out_json, payload)

    rows = _metric_rows(f"{args.case}__initial", initial) + \
        _metric_rows(args.case, warped)
    with open(args.out_csv, "w", encoding="ascii") as fh:
        fh.write("case,label,dice,hd95_mm,sdlogj,folding_fraction\n")
        for r in rows:
            fh.write(f"{r['case']},{r['label']},{r['dice']:.6f},"
                     f"{r['hd95_mm']:.6f},{r['sdlogj']:.6f},"
                     f"{r['folding_fraction']:.6f}\n")
    print(f"evaluate: mean dice {initial.mean_dice:.4f} -> {warped.mean_dice:.4f}, "
          f"sdlogj {warped.sdlogj:.4f} -> {args.out_json}")
    return 0


def cmd_montage(args) -> int:
    a = _as_volume(_load_nifti(args.vol_a))
    if args.mode == "logj":
        disp = _as_field(_load_nifti(args.vol_b), args.vol_b)
        img = montage_logj(a, disp)
    else:
        b = _as_volume(_load_nifti(args.vol_b))
        img = montage_checker(a, b) if args.mode == "checker" else montage_diff(a, b)
    write_pgm(args.output, img)
    print(f"montage: {args.mode} -> {args.output}")
    return 0


# -------------------------------------------------------------- parser

def _add_register_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lambda_", type=float, default=1.0,
                   help="smoothness weight (default 1)")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--capture-radius", type=_int_list, default=[8, 4, 2],
                   metavar="R0,R1,...", help="per-level search radius")
    p.add_argument("--quant-step", type=_int_list, default=[2, 2, 1],
                   metavar="Q0,Q1,...", help="per-level candidate step")
    p.add_argument("--cc-iters", type=int, default=3)
    p.add_argument("--smooth-radius", type=int, default=2)
    p.add_argument("--refine-iters", type=int, default=100)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--pca-dim", type=int, default=None,
                   help="shared projection dim (default: min(24, D, rows))")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="featreg",
        description="Training-free deformable registration on patch-token features")
    ap.add_argument("--version", action="version", version=f"featreg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_int_list, default=[64, 64, 64],
                   metavar="W,H,Z")
    p.add_argument("--n-blobs", type=int, default=5)
    p.add_argument("--warp-amplitude", type=float, default=4.0)
    p.add_argument("--warp-smoothness", type=float, default=8.0)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write per-slice features as FVB1")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--encoder", choices=["desk", "file"], default="desk")
    p.add_argument("--features", default=None,
                   help="existing FVB1 to validate when --encoder file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("register", help="estimate a displacement field")
    p.add_argument("fix")
    p.add_argument("mov")
    p.add_argument("--fix-feat", default=None, help="FVB1 features for fix")
    p.add_argument("--mov-feat", default=None, help="FVB1 features for mov")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=0,
                   help="recorded in the manifest (the solver is deterministic)")
    p.add_argument("--out-dir", default=".")
    _add_register_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("warp", help="apply a field to a volume or labels")
    p.add_argument("input")
    p.add_argument("disp")
    p.add_argument("output")
    p.add_argument("--interp", choices=["auto", "linear", "nearest"],
                   default="auto")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("evaluate", help="Dice / HD95 / SDLogJ report")
    p.add_argument("fix_labels")
    p.add_argument("mov_labels")
    p.add_argument("disp")
    p.add_argument("--labels", default=None, metavar="L1,L2,...")
    p.add_argument("--case", default="case")
    p.add_argument("--out-json", default="metrics.json")
    p.add_argument("--out-csv", default="metrics.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("montage", help="mid-slice PGM rendering")
    p.add_argument("vol_a")
    p.add_argument("vol_b", help="second volume, or the field for --mode logj")
    p.add_argument("output")
    p.add_argument("--mode", choices=["checker", "diff", "logj"],
                   default="checker")
    p.set_defaults(func=cmd_montage)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"featreg: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FeatregError, OSError, ValueError) as exc:
        print(f"featreg: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
