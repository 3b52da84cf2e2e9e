"""Consistency checks for exported FVB1 files.

verify_fvb re-parses the file from bytes, confirms the payload size
arithmetic, compares its Z against the volume it claims to describe,
and scans every encoded slice for non-finite values.  Each problem
becomes one named failure line; an empty list means the file is safe
to feed to a registration consumer.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import volio
from .errors import FormatError
from .export import selected_indices


@dataclasses.dataclass
class VerifyReport:
    failures: list[str]
    header: dict

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        if self.ok:
            h = self.header
            return [f"ok: Z={h['Z']} grid={h['grid_w']}x{h['grid_h']} "
                    f"D={h['D']} stride_k={h['stride_k']} "
                    f"encoder={h['encoder_id']}"]
        return [f"FAIL {f}" for f in self.failures]


def verify_fvb(fvb_path: str, volume_path: str) -> VerifyReport:
    with open(fvb_path, "rb") as fh:
        buf = fh.read()
    try:
        parsed = volio.parse_fvb(buf)
    except FormatError as exc:
        # parse_fvb already folds magic/version/size arithmetic into one
        # error; surface it as the single failure
        return VerifyReport([f"format: {exc}"], {})

    failures: list[str] = []
    header = {k: parsed[k] for k in
              ("Z", "grid_w", "grid_h", "D", "stride_k", "encoder_id")}
    Z = parsed["Z"]

    data, _spacing = volio.read_volume(volume_path)
    if data.shape[2] != Z:
        failures.append(
            f"z_mismatch: file encodes Z={Z} but volume has Z="
            f"{data.shape[2]}")

    mask = parsed["mask"]
    if not (mask[0] and mask[-1]):
        failures.append(
            "boundary_mask: first and last slices must be encoded")
    expected = np.zeros(Z, dtype=bool)
    expected[selected_indices(Z, parsed["stride_k"])] = True
    if not np.array_equal(mask, expected):
        diff = np.flatnonzero(mask != expected)[:5].tolist()
        failures.append(
            f"stride_mask: mask disagrees with the stride_k="
            f"{parsed['stride_k']} selection at slices {diff}")

    tokens = parsed["tokens"]
    for z in np.flatnonzero(mask):
        if not np.isfinite(tokens[z]).all():
            failures.append(f"nonfinite: slice {z} has non-finite tokens")
    return VerifyReport(failures, header)
