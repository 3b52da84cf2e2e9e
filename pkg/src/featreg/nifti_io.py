"""Single-file NIfTI-1 subset plus the FVB1 feature-stack format.

The NIfTI subset covers uncompressed .nii with datatypes uint8, int16
and float32, axis-aligned geometry (qform/sform ignored), and the
scl_slope/scl_inter affine scaling rule (slope 0 means raw).  Scalar
volumes use dim[0]=3; displacement fields are stored as dim[0]=5 with
one time point and 3 components (intent code 1007).  Files are written
little-endian; both byte orders are accepted on read, detected through
the sizeof_hdr field.

FVB1 is the fixed little-endian interchange format for per-slice token
stacks:

    offset 0   magic   "FVB1"
    offset 4   u32     version (1)
    offset 8   u32 x5  Z, grid_w, grid_h, D, stride_k
    offset 28  bytes   encoder_id, NUL-padded to 64
    offset 92  u8 x Z  encoded_mask (nonzero = directly encoded)
    offset 92+Z        payload: Z*grid_w*grid_h*D float32 values,
                       slice-major, then token (row-major grid), then channel

The mask is authoritative; stride_k is advisory metadata.  Every size is
validated against the actual buffer length before any array allocation.
"""
from __future__ import annotations

import struct

import numpy as np

from .encoder import SliceFeatureStack, TokenGrid
from .errors import (
    BadMagic,
    FormatError,
    SizeMismatch,
    TruncatedPayload,
    UnsupportedDatatype,
)
from .volcore import DisplacementField, LabelVolume, Spacing, Volume3D

HDR_SIZE = 348
VOX_OFFSET = 352
_DT_UINT8, _DT_INT16, _DT_FLOAT32 = 2, 4, 16
_DTYPES = {_DT_UINT8: ("u1", 8), _DT_INT16: ("i2", 16), _DT_FLOAT32: ("f4", 32)}

FVB_MAGIC = b"FVB1"
FVB_VERSION = 1
FVB_HEADER = 92  # fixed part before the per-slice mask


# ---------------------------------------------------------------- NIfTI-1

def _pack_header(dims5, pixdim, datatype: int, intent_code: int) -> bytes:
    hdr = bytearray(HDR_SIZE)
    struct.pack_into("<i", hdr, 0, HDR_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    dim = [0] * 8
    dim[0] = 5 if dims5[4] > 1 else 3
    for i, n in enumerate(dims5):
        dim[i + 1] = n
    dim[6] = dim[7] = 1
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 68, intent_code)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, _DTYPES[datatype][1])
    pd = [1.0, pixdim[0], pixdim[1], pixdim[2], 0.0, 0.0, 0.0, 0.0]
    struct.pack_into("<8f", hdr, 76, *pd)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)  # slope 0: raw values
    struct.pack_into("<b", hdr, 123, 2)          # spatial units: mm
    descrip = b"featreg nifti subset"
    hdr[148:148 + len(descrip)] = descrip
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00\x00\x00\x00"  # no extensions


def write_nifti(vol, path: str | None = None) -> bytes:
    """Serialize a Volume3D, LabelVolume or DisplacementField to .nii bytes.

    Scalars are stored as float32, labels as uint8 (int16 when any label
    exceeds 255), fields as 5-D float32 with 3 components.  Returns the
    bytes and also writes them to ``path`` when given.
    """
    if isinstance(vol, LabelVolume):
        peak = int(vol.data.max(initial=0))
        if peak > 32767:
            raise UnsupportedDatatype("datatype", f"label {peak} exceeds int16")
        code = _DT_UINT8 if peak <= 255 else _DT_INT16
        np_dt = "<u1" if code == _DT_UINT8 else "<i2"
        payload = vol.data.astype(np_dt).ravel(order="F").tobytes()
        dims5 = (*vol.dims, 1, 1)
        spacing = vol.spacing
        intent = 0
    elif isinstance(vol, DisplacementField):
        code = _DT_FLOAT32
        arr5 = vol.vectors.reshape(vol.dims + (1, 3))
        payload = arr5.astype("<f4").ravel(order="F").tobytes()
        dims5 = (*vol.dims, 1, 3)
        spacing = vol.spacing
        intent = 1007  # vector-valued voxels
    elif isinstance(vol, Volume3D):
        code = _DT_FLOAT32
        payload = vol.data.astype("<f4").ravel(order="F").tobytes()
        dims5 = (*vol.dims, 1, 1)
        spacing = vol.spacing
        intent = 0
    else:
        raise UnsupportedDatatype("datatype", f"cannot serialize {type(vol).__name__}")

    blob = _pack_header(dims5, spacing.as_array(), code, intent) + payload
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def read_nifti(buf: bytes):
    """Parse .nii bytes into Volume3D, LabelVolume or DisplacementField.

    Integer files with identity scaling and no negative values load as
    LabelVolume; anything else scalar loads as Volume3D with slope/inter
    applied when slope is nonzero.  All structural problems raise
    FormatError subclasses naming the offending field; payload length is
    checked against the header arithmetic before any allocation.
    """
    buf = bytes(buf)
    if len(buf) < HDR_SIZE:
        raise BadMagic("sizeof_hdr", f"file holds {len(buf)} bytes, header needs {HDR_SIZE}")
    (size_le,) = struct.unpack_from("<i", buf, 0)
    (size_be,) = struct.unpack_from(">i", buf, 0)
    if size_le == HDR_SIZE:
        e = "<"
    elif size_be == HDR_SIZE:
        e = ">"
    else:
        raise BadMagic("sizeof_hdr", f"expected {HDR_SIZE}, got {size_le} (LE) / {size_be} (BE)")
    if buf[344:347] != b"n+1":
        raise BadMagic("magic", f"expected 'n+1', got {buf[344:347]!r}")

    dim = struct.unpack_from(e + "8h", buf, 40)
    ndim = dim[0]
    if ndim not in (3, 5):
        raise BadMagic("dim", f"dim[0]={ndim} outside supported {{3, 5}}")
    W, H, Z = dim[1], dim[2], dim[3]
    if min(W, H, Z) < 1:
        raise BadMagic("dim", f"non-positive spatial dims {(W, H, Z)}")
    n_comp = 1
    if ndim == 5:
        if dim[4] != 1:
            raise BadMagic("dim", f"dim[4]={dim[4]}, only single time point supported")
        n_comp = dim[5]
        if n_comp != 3:
            raise BadMagic("dim", f"dim[5]={n_comp}, vector files need 3 components")

    (datatype,) = struct.unpack_from(e + "h", buf, 70)
    if datatype not in _DTYPES:
        raise UnsupportedDatatype("datatype", f"code {datatype} not in {sorted(_DTYPES)}")
    np_dt, bits = _DTYPES[datatype]
    (bitpix,) = struct.unpack_from(e + "h", buf, 72)
    if bitpix != bits:
        raise BadMagic("bitpix", f"datatype {datatype} needs bitpix {bits}, got {bitpix}")

    pixdim = struct.unpack_from(e + "8f", buf, 76)
    sx, sy, sz = pixdim[1], pixdim[2], pixdim[3]
    if not all(np.isfinite(v) and v > 0 for v in (sx, sy, sz)):
        raise BadMagic("pixdim", f"spacing {(sx, sy, sz)} must be finite and positive")
    spacing = Spacing(float(sx), float(sy), float(sz))

    (vox_offset,) = struct.unpack_from(e + "f", buf, 108)
    if not np.isfinite(vox_offset) or vox_offset < HDR_SIZE:
        raise BadMagic("vox_offset", f"offset {vox_offset} below header size")
    offset = int(vox_offset)
    slope, inter = struct.unpack_from(e + "2f", buf, 112)
    if not (np.isfinite(slope) and np.isfinite(inter)):
        raise BadMagic("scl_slope", f"non-finite scaling {slope}/{inter}")

    count = W * H * Z * n_comp          # Python ints: no overflow
    expected = count * (bits // 8)
    available = len(buf) - offset
    if available < expected:
        raise TruncatedPayload(
            "payload", f"need {expected} bytes at offset {offset}, have {max(available, 0)}")

    raw = np.frombuffer(buf, dtype=e + np_dt, count=count, offset=offset)
    data = raw.reshape((W, H, Z, 1, n_comp), order="F").astype(np.float64)
    if not np.isfinite(data).all():
        raise FormatError("payload", "non-finite samples in data block")
    if slope != 0.0:
        data = data * slope + inter

    if n_comp == 3:
        return DisplacementField(np.ascontiguousarray(data[:, :, :, 0, :]), spacing)
    data = np.ascontiguousarray(data[:, :, :, 0, 0])
    integral = datatype in (_DT_UINT8, _DT_INT16)
    identity_scale = slope in (0.0, 1.0) and inter == 0.0
    if integral and identity_scale and data.min() >= 0:
        return LabelVolume(data.astype(np.int64), spacing)
    return Volume3D(data, spacing)


# ------------------------------------------------------------------ FVB1

def write_fvb(stack: SliceFeatureStack, path: str | None = None) -> bytes:
    """Serialize a token stack to FVB1 bytes (and optionally to a file)."""
    enc_id = stack.encoder_id.encode("ascii", "replace")[:64]
    header = FVB_MAGIC + struct.pack(
        "<6I", FVB_VERSION, stack.Z, stack.grid_w, stack.grid_h, stack.D,
        stack.stride_k)
    header += enc_id + b"\x00" * (64 - len(enc_id))
    mask = stack.encoded_mask.astype(np.uint8).tobytes()
    payload = stack.tokens_array().astype("<f4").tobytes()
    blob = header + mask + payload
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(blob)
    return blob


def read_fvb(buf: bytes) -> SliceFeatureStack:
    """Parse FVB1 bytes; the buffer length must match the header arithmetic
    exactly and is verified before the payload is touched."""
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != FVB_MAGIC:
        raise BadMagic("magic", f"expected {FVB_MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < FVB_HEADER:
        raise SizeMismatch("header", f"need {FVB_HEADER} bytes, got {len(buf)}")
    version, Z, gw, gh, D, stride_k = struct.unpack_from("<6I", buf, 4)
    if version != FVB_VERSION:
        raise BadMagic("version", f"unsupported version {version}")
    for name, v in (("Z", Z), ("grid_w", gw), ("grid_h", gh), ("D", D),
                    ("stride_k", stride_k)):
        if v < 1:
            raise SizeMismatch(name, f"must be positive, got {v}")
    expected = FVB_HEADER + Z + Z * gw * gh * D * 4  # Python ints: no overflow
    if len(buf) != expected:
        raise SizeMismatch("payload", f"expected {expected} bytes total, got {len(buf)}")

    encoder_id = buf[28:92].split(b"\x00", 1)[0].decode("ascii", "replace")
    mask = np.frombuffer(buf, dtype=np.uint8, count=Z, offset=FVB_HEADER) != 0
    tokens = np.frombuffer(buf, dtype="<f4", count=Z * gw * gh * D,
                           offset=FVB_HEADER + Z)
    if not np.isfinite(tokens).all():
        raise FormatError("payload", "non-finite token values")
    tokens = tokens.astype(np.float64).reshape(Z, gw * gh, D)
    slices = [TokenGrid(gw, gh, D, tokens[z]) for z in range(Z)]
    return SliceFeatureStack(Z, slices, mask, stride_k, encoder_id)
