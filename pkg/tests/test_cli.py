import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from featreg.cli import main
from featreg.nifti_io import read_fvb, read_nifti
from featreg.volcore import DisplacementField, LabelVolume, Volume3D

QUICK_REG = ["--threads", "1", "--patch-size", "2", "--lambda", "0.02",
             "--levels", "2", "--capture-radius", "2,2", "--quant-step", "1,1",
             "--refine-iters", "20", "--step-size", "0.05"]


def synth(tmp_path, seed=0, dims="32,32,32", amp="3", smooth="8", name="case",
          blobs="5"):
    out = tmp_path / name
    rc = main(["synth", "--seed", str(seed), "--dims", dims,
               "--warp-amplitude", amp, "--warp-smoothness", smooth,
               "--n-blobs", blobs, "--out-dir", str(out)])
    assert rc == 0
    return out


def test_synth_writes_loadable_files(tmp_path):
    out = synth(tmp_path, seed=4)
    assert isinstance(read_nifti((out / "fix.nii").read_bytes()), Volume3D)
    assert isinstance(read_nifti((out / "mov.nii").read_bytes()), Volume3D)
    assert isinstance(read_nifti((out / "fix_labels.nii").read_bytes()),
                      LabelVolume)
    assert isinstance(read_nifti((out / "mov_labels.nii").read_bytes()),
                      LabelVolume)
    assert isinstance(read_nifti((out / "truth_disp.nii").read_bytes()),
                      DisplacementField)


def test_synth_tuned_difficulty_separates_the_pair(tmp_path):
    # generator self-test: the harness setting leaves little initial overlap
    out = synth(tmp_path, seed=2, dims="64,64,64", amp="7", smooth="16")
    from featreg.metrics import evaluate
    fx = read_nifti((out / "fix_labels.nii").read_bytes())
    mv = read_nifti((out / "mov_labels.nii").read_bytes())
    rep = evaluate(fx, mv, DisplacementField.zeros(fx.dims, fx.spacing))
    assert rep.mean_dice <= 0.6


def test_extract_stride_mask(tmp_path):
    out = synth(tmp_path, seed=5)
    fvb = tmp_path / "fix.fvb"
    rc = main(["extract", str(out / "fix.nii"), str(fvb),
               "--stride", "2", "--patch-size", "4"])
    assert rc == 0
    stack = read_fvb(fvb.read_bytes())
    assert stack.Z == 32
    assert stack.encoder_id == "desk-v1"
    assert stack.stride_k == 2
    want = np.zeros(32, dtype=bool)
    want[::2] = True
    want[-1] = True
    assert np.array_equal(stack.encoded_mask, want)


def test_extract_file_mode_validates_features(tmp_path):
    out = synth(tmp_path, seed=6)
    fvb = tmp_path / "fix.fvb"
    assert main(["extract", str(out / "fix.nii"), str(fvb)]) == 0
    # revalidation passes and rewrites the same stack
    fvb2 = tmp_path / "copy.fvb"
    rc = main(["extract", str(out / "fix.nii"), str(fvb2),
               "--encoder", "file", "--features", str(fvb)])
    assert rc == 0
    assert fvb2.read_bytes() == fvb.read_bytes()
    # missing --features and Z mismatches are input errors
    assert main(["extract", str(out / "fix.nii"), str(tmp_path / "x.fvb"),
                 "--encoder", "file"]) == 2
    small = synth(tmp_path, seed=6, dims="24,24,16", name="small", blobs="3")
    assert main(["extract", str(small / "fix.nii"), str(tmp_path / "y.fvb"),
                 "--encoder", "file", "--features", str(fvb)]) == 2


def test_register_writes_field_trace_manifest(tmp_path):
    out = synth(tmp_path, seed=1)
    reg = tmp_path / "reg"
    rc = main(["register", str(out / "fix.nii"), str(out / "mov.nii"),
               "--out-dir", str(reg), "--seed", "1", *QUICK_REG])
    assert rc == 0

    disp = read_nifti((reg / "disp.nii").read_bytes())
    assert isinstance(disp, DisplacementField)
    assert disp.dims == (32, 32, 32)

    trace = json.loads((reg / "trace.json").read_text())
    assert len(trace) == 21
    assert [t["iteration"] for t in trace] == list(range(21))
    assert set(trace[0]) == {"iteration", "sim", "reg", "total"}
    assert trace[-1]["total"] <= trace[0]["total"]

    man = json.loads((reg / "manifest.json").read_text())
    assert man["schema"] == 1
    assert man["threads"] == 1 and man["seed"] == 1
    assert man["backend"] in ("native", "numpy")
    assert man["config"]["registration"]["lambda"] == 0.02
    assert man["config"]["encoder"]["patch_size"] == 2
    for key, fname in (("fix", "fix.nii"), ("mov", "mov.nii")):
        digest = hashlib.sha256((out / fname).read_bytes()).hexdigest()
        assert man["inputs"][key]["sha256"] == digest
    assert set(man["timings_s"]) == {"load", "register", "write"}


def test_register_accepts_external_features(tmp_path):
    out = synth(tmp_path, seed=7, dims="24,24,16")
    ff, mf = tmp_path / "f.fvb", tmp_path / "m.fvb"
    assert main(["extract", str(out / "fix.nii"), str(ff), "--patch-size", "2"]) == 0
    assert main(["extract", str(out / "mov.nii"), str(mf), "--patch-size", "2"]) == 0
    reg = tmp_path / "reg"
    rc = main(["register", str(out / "fix.nii"), str(out / "mov.nii"),
               "--fix-feat", str(ff), "--mov-feat", str(mf),
               "--out-dir", str(reg), *QUICK_REG])
    assert rc == 0
    man = json.loads((reg / "manifest.json").read_text())
    assert "fix_feat" in man["inputs"] and "mov_feat" in man["inputs"]
    # stack from a different Z extent is rejected up front
    tall = synth(tmp_path, seed=7, dims="24,24,20", name="tall")
    rc = main(["register", str(tall / "fix.nii"), str(tall / "mov.nii"),
               "--fix-feat", str(ff), "--out-dir", str(tmp_path / "r2"),
               *QUICK_REG])
    assert rc == 2


def test_register_identity_then_evaluate_is_near_perfect(tmp_path):
    out = synth(tmp_path, seed=3, dims="32,32,32", amp="7", smooth="16")
    reg = tmp_path / "reg"
    rc = main(["register", str(out / "fix.nii"), str(out / "fix.nii"),
               "--out-dir", str(reg), *QUICK_REG])
    assert rc == 0
    disp = read_nifti((reg / "disp.nii").read_bytes())
    assert float(np.linalg.norm(disp.vectors, axis=-1).mean()) <= 0.1
    mj = tmp_path / "m.json"
    rc = main(["evaluate", str(out / "fix_labels.nii"),
               str(out / "fix_labels.nii"), str(reg / "disp.nii"),
               "--out-json", str(mj), "--out-csv", str(tmp_path / "m.csv")])
    assert rc == 0
    rep = json.loads(mj.read_text())["warped"]
    assert rep["mean_dice"] >= 0.99
    assert rep["sdlogj"] <= 0.01


def test_register_then_evaluate_recovers_a_mild_warp(tmp_path):
    # end-to-end quality gate on a seeded 64-cube pair: the recovered field
    # must land within 0.05 of the truth-field Dice (exactly 1.0 here) and
    # clear the 0.90 bar
    out = synth(tmp_path, seed=7, dims="64,64,64", amp="1.5", smooth="16")
    reg = tmp_path / "reg"
    rc = main(["register", str(out / "fix.nii"), str(out / "mov.nii"),
               "--out-dir", str(reg), "--threads", "1", "--patch-size", "2",
               "--lambda", "0.005", "--levels", "2", "--capture-radius", "4,2",
               "--quant-step", "1,1", "--refine-iters", "500",
               "--step-size", "0.1"])
    assert rc == 0
    mj, mc = tmp_path / "m.json", tmp_path / "m.csv"
    rc = main(["evaluate", str(out / "fix_labels.nii"),
               str(out / "mov_labels.nii"), str(reg / "disp.nii"),
               "--case", "mild", "--out-json", str(mj), "--out-csv", str(mc)])
    assert rc == 0
    payload = json.loads(mj.read_text())

    truth_rep = json.loads(mj.read_text())  # truth dice from the generator
    from featreg.metrics import evaluate as eval_direct
    fx = read_nifti((out / "fix_labels.nii").read_bytes())
    mv = read_nifti((out / "mov_labels.nii").read_bytes())
    truth = read_nifti((out / "truth_disp.nii").read_bytes())
    truth_dice = eval_direct(fx, mv, truth).mean_dice
    assert truth_dice == 1.0

    got = payload["warped"]["mean_dice"]
    assert got >= 0.90
    assert abs(truth_dice - got) <= 0.05

    with open(mc) as fh:
        rows = list(csv.DictReader(fh))
    # 5 labels + mean, for the initial and the warped pass
    assert len(rows) == 12
    cases = {r["case"] for r in rows}
    assert cases == {"mild__initial", "mild"}
    mean_row = [r for r in rows if r["case"] == "mild" and r["label"] == "mean"]
    assert float(mean_row[0]["dice"]) == pytest.approx(got, abs=5e-7)


def test_warp_auto_interp_and_errors(tmp_path):
    out = synth(tmp_path, seed=8, dims="24,24,16")
    warped = tmp_path / "w.nii"
    rc = main(["warp", str(out / "mov_labels.nii"), str(out / "truth_disp.nii"),
               str(warped)])
    assert rc == 0
    got = read_nifti(warped.read_bytes())
    assert isinstance(got, LabelVolume)      # auto picked nearest
    want = read_nifti((out / "fix_labels.nii").read_bytes())
    assert np.array_equal(got.data, want.data)
    # linear interpolation of labels is refused by the warp layer
    assert main(["warp", str(out / "mov_labels.nii"),
                 str(out / "truth_disp.nii"), str(warped),
                 "--interp", "linear"]) == 2
    # a displacement field is not warpable input
    assert main(["warp", str(out / "truth_disp.nii"),
                 str(out / "truth_disp.nii"), str(warped)]) == 2


def test_montage_modes_write_pgm(tmp_path):
    out = synth(tmp_path, seed=9, dims="40,40,16")
    for mode, b in (("checker", "mov.nii"), ("diff", "mov.nii"),
                    ("logj", "truth_disp.nii")):
        img = tmp_path / f"{mode}.pgm"
        rc = main(["montage", str(out / "fix.nii"), str(out / b),
                   str(img), "--mode", mode])
        assert rc == 0
        assert img.read_bytes().startswith(b"P5\n40 40\n255\n")


def test_input_error_exit_codes(tmp_path):
    out = synth(tmp_path, seed=10, dims="24,24,16")
    assert main(["register", str(tmp_path / "missing.nii"),
                 str(out / "mov.nii"), "--out-dir", str(tmp_path)]) == 2
    junk = tmp_path / "junk.nii"
    junk.write_bytes(b"not a volume")
    assert main(["warp", str(junk), str(out / "truth_disp.nii"),
                 str(tmp_path / "o.nii")]) == 2
    other = synth(tmp_path, seed=10, dims="32,32,16", name="other")
    assert main(["register", str(out / "fix.nii"), str(other / "mov.nii"),
                 "--out-dir", str(tmp_path / "r")]) == 2
    # scalar volume where a field is required
    assert main(["evaluate", str(out / "fix_labels.nii"),
                 str(out / "mov_labels.nii"), str(out / "fix.nii"),
                 "--out-json", str(tmp_path / "m.json"),
                 "--out-csv", str(tmp_path / "m.csv")]) == 2


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_numerical_failure_exit_code(tmp_path):
    out = synth(tmp_path, seed=11, dims="24,24,16")
    rc = main(["register", str(out / "fix.nii"), str(out / "mov.nii"),
               "--out-dir", str(tmp_path / "r"), "--threads", "1",
               "--levels", "1", "--capture-radius", "2", "--quant-step", "1",
               "--refine-iters", "5", "--step-size", "1e160"])
    assert rc == 3


def test_version_subprocess():
    proc = subprocess.run([sys.executable, "-m", "featreg.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "featreg" in proc.stdout
