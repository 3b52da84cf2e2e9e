"""Minimal volume and feature-bank file I/O.

Reads the scalar-volume subset of NIfTI-1 (single-file .nii, 3D, a few
common datatypes, scl_slope/scl_inter scaling) and writes/parses FVB1
feature banks.  FVB1 layout: b"FVB1", then <6I version/Z/grid_w/grid_h/
D/stride_k, a 64-byte NUL-padded encoder id, Z mask bytes (1 = slice
was encoded), then Z*grid_w*grid_h*D little-endian float32 token values,
slice-major, token index inside a slice = gy*grid_w + gx.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

HDR_SIZE = 348
NIFTI_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}

FVB_MAGIC = b"FVB1"
FVB_VERSION = 1
FVB_HEADER = 92  # magic + 6 u32 fields + 64-byte encoder id


def read_volume(path: str) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Load a 3D scalar NIfTI-1 file as (W, H, Z) float32 plus spacing."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < HDR_SIZE:
        raise FormatError(f"file shorter than a NIfTI-1 header: {len(buf)}")
    for e in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(e + "i", buf, 0)
        if sizeof_hdr == HDR_SIZE:
            break
    else:
        raise FormatError("sizeof_hdr is not 348 in either byte order")
    if buf[344:348] not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError("missing NIfTI magic")

    dim = struct.unpack_from(e + "8h", buf, 40)
    ndim = dim[0]
    # scalar only: 3 spatial dims, any trailing dims must be 1
    if not 3 <= ndim <= 7 or any(d != 1 for d in dim[4:1 + ndim]):
        raise FormatError(f"expected a 3D scalar volume, got dim {dim}")
    W, H, Z = dim[1], dim[2], dim[3]
    if min(W, H, Z) < 1:
        raise FormatError(f"non-positive spatial dims {dim[1:4]}")

    (datatype,) = struct.unpack_from(e + "h", buf, 70)
    if datatype not in NIFTI_DTYPES:
        raise FormatError(f"unsupported datatype code {datatype}")
    np_dt = NIFTI_DTYPES[datatype]

    pixdim = struct.unpack_from(e + "8f", buf, 76)
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])

    (vox_offset,) = struct.unpack_from(e + "f", buf, 108)
    if not np.isfinite(vox_offset) or vox_offset < HDR_SIZE:
        raise FormatError(f"bad vox_offset {vox_offset}")
    offset = int(vox_offset)

    slope, inter = struct.unpack_from(e + "2f", buf, 112)
    if not (np.isfinite(slope) and np.isfinite(inter)):
        raise FormatError("non-finite scl_slope/scl_inter")

    count = W * H * Z
    itemsize = np.dtype(np_dt).itemsize
    if len(buf) < offset + count * itemsize:
        raise FormatError("payload shorter than the header promises")
    raw = np.frombuffer(buf, dtype=e + np_dt, count=count, offset=offset)
    data = raw.reshape((W, H, Z), order="F").astype(np.float32)
    if slope not in (0.0, 1.0) or inter != 0.0:
        if slope != 0.0:
            data = data * np.float32(slope) + np.float32(inter)
    if not np.isfinite(data).all():
        raise FormatError("volume payload contains non-finite values")
    return data, spacing


def write_fvb(path: str, Z: int, grid_w: int, grid_h: int, D: int,
              stride_k: int, encoder_id: str, mask: np.ndarray,
              tokens: np.ndarray) -> bytes:
    """Serialize tokens (Z, grid_w*grid_h, D) float32 to an FVB1 file.

    Rows for slices with mask False are stored as given (the exporter
    zero-fills them); consumers re-derive them from the mask.
    """
    if tokens.shape != (Z, grid_w * grid_h, D):
        raise FormatError(
            f"token block {tokens.shape} does not match the header "
            f"({Z}, {grid_w * grid_h}, {D})")
    if mask.shape != (Z,):
        raise FormatError(f"mask length {mask.shape} != Z {Z}")
    enc = encoder_id.encode("ascii", "replace")[:64]
    blob = FVB_MAGIC + struct.pack("<6I", FVB_VERSION, Z, grid_w, grid_h, D,
                                   stride_k)
    blob += enc + b"\x00" * (64 - len(enc))
    blob += np.asarray(mask, dtype=bool).astype(np.uint8).tobytes()
    blob += np.ascontiguousarray(tokens, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def parse_fvb(buf: bytes) -> dict:
    """Parse FVB1 bytes into header fields, mask, and a token array."""
    if len(buf) < FVB_HEADER:
        raise FormatError(f"file shorter than an FVB1 header: {len(buf)}")
    if buf[:4] != FVB_MAGIC:
        raise FormatError("missing FVB1 magic")
    version, Z, gw, gh, D, stride_k = struct.unpack_from("<6I", buf, 4)
    if version != FVB_VERSION:
        raise FormatError(f"unsupported FVB version {version}")
    if min(Z, gw, gh, D, stride_k) < 1:
        raise FormatError(
            f"non-positive header field (Z={Z} gw={gw} gh={gh} D={D} "
            f"k={stride_k})")
    encoder_id = buf[28:92].split(b"\x00", 1)[0].decode("ascii", "replace")
    expect = FVB_HEADER + Z + Z * gw * gh * D * 4
    if len(buf) != expect:
        raise FormatError(
            f"payload size {len(buf)} != expected {expect} from header")
    mask = np.frombuffer(buf, dtype=np.uint8, count=Z, offset=FVB_HEADER) != 0
    tokens = np.frombuffer(buf, dtype="<f4", count=Z * gw * gh * D,
                           offset=FVB_HEADER + Z)
    return {
        "Z": Z, "grid_w": gw, "grid_h": gh, "D": D, "stride_k": stride_k,
        "encoder_id": encoder_id, "mask": mask,
        "tokens": tokens.reshape(Z, gw * gh, D),
    }
