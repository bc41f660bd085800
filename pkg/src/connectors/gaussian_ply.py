"""
Reader/writer for 3DGS-layout PLY files (binary little-endian or ascii)
"""
import io
import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError
from scipy.special import expit, logit

from src.core.errors import PreconditionError, SceneFormatError
from src.models.scene import GaussianCloud, RawGaussianAttributes
from src.utils.logger import logger

POSITION_FIELDS = ("x", "y", "z")
DC_FIELDS = ("f_dc_0", "f_dc_1", "f_dc_2")
SCALE_FIELDS = ("scale_0", "scale_1", "scale_2")
ROT_FIELDS = ("rot_0", "rot_1", "rot_2", "rot_3")
REQUIRED_FIELDS = POSITION_FIELDS + ("opacity",) + SCALE_FIELDS + ROT_FIELDS + DC_FIELDS

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_F_REST = re.compile(r"^f_rest_(\d+)$")


@dataclass
class _Header:
    length: int
    fmt: str
    vertex_count: int
    vertex_line_offset: int
    properties: List[Tuple[str, str, int]]  # name, numpy dtype, header offset


def _scan_header(data: bytes) -> _Header:
    """Locate header fields needed for validation and error offsets"""
    if not data.startswith(b"ply"):
        raise SceneFormatError("malformed header: missing 'ply' magic", offset=0)
    end = data.find(b"end_header")
    if end < 0:
        raise SceneFormatError("malformed header: no end_header line", offset=len(data))
    newline = data.find(b"\n", end)
    length = len(data) if newline < 0 else newline + 1

    fmt = None
    vertex_count = None
    vertex_line_offset = 0
    properties: List[Tuple[str, str, int]] = []
    current = None
    offset = 0
    for raw_line in data[:length].split(b"\n"):
        line_offset = offset
        offset += len(raw_line) + 1
        try:
            line = raw_line.decode("ascii").strip()
        except UnicodeDecodeError:
            raise SceneFormatError("malformed header: non-ascii bytes", offset=line_offset)
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise SceneFormatError("malformed header: bad format line", offset=line_offset)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise SceneFormatError("malformed header: bad element line", offset=line_offset)
            current = parts[1]
            if current == "vertex":
                vertex_count = int(parts[2])
                vertex_line_offset = line_offset
        elif parts[0] == "property" and current == "vertex":
            if len(parts) == 3:
                dtype = _PLY_TYPES.get(parts[1])
                if dtype is None:
                    raise SceneFormatError(f"malformed header: unknown type {parts[1]}", offset=line_offset, property_name=parts[2])
                properties.append((parts[2], dtype, line_offset))
            else:
                name = parts[-1] if len(parts) > 1 else None
                raise SceneFormatError("malformed header: list properties are not allowed on vertices", offset=line_offset, property_name=name)

    if fmt not in ("binary_little_endian", "ascii"):
        raise SceneFormatError(f"malformed header: unsupported format {fmt!r}", offset=0)
    if vertex_count is None:
        raise SceneFormatError("malformed header: no vertex element", offset=0)
    return _Header(length, fmt, vertex_count, vertex_line_offset, properties)


def _check_payload(data: bytes, header: _Header) -> None:
    names = [p[0] for p in header.properties]
    for required in REQUIRED_FIELDS:
        if required not in names:
            raise SceneFormatError("missing required property", offset=header.vertex_line_offset, property_name=required)
    if header.fmt != "binary_little_endian":
        return
    row_size = sum(np.dtype(p[1]).itemsize for p in header.properties)
    available = len(data) - header.length
    if available < row_size * header.vertex_count:
        row, within = divmod(available, row_size) if row_size else (0, 0)
        cursor = 0
        cut = header.properties[0][0]
        for name, dtype, _ in header.properties:
            size = np.dtype(dtype).itemsize
            if within < cursor + size:
                cut = name
                break
            cursor += size
        raise SceneFormatError(f"truncated payload at vertex {row}", offset=len(data), property_name=cut)


def _ascii_row_offset(data: bytes, header: _Header, row: int) -> int:
    offset = header.length
    for _ in range(max(row, 0)):
        nxt = data.find(b"\n", offset)
        if nxt < 0:
            return len(data)
        offset = nxt + 1
    return offset


def parse_gaussian_ply(data: bytes) -> GaussianCloud:
    """Decode a 3DGS PLY and apply sigmoid/exp/normalize activations"""
    header = _scan_header(data)
    _check_payload(data, header)

    try:
        ply = PlyData.read(io.BytesIO(data))
    except PlyHeaderParseError as e:
        raise SceneFormatError(f"malformed header: {e.message}", offset=0)
    except PlyElementParseError as e:
        prop = e.prop.name if e.prop is not None else None
        if header.fmt == "ascii":
            offset = _ascii_row_offset(data, header, e.row or 0)
        else:
            offset = header.length
        raise SceneFormatError(f"malformed vertex data: {e.message}", offset=offset, property_name=prop)

    vertex = ply["vertex"].data
    names = vertex.dtype.names or ()

    rest = sorted((int(m.group(1)), n) for n in names if (m := _F_REST.match(n)))
    if len(rest) % 3 != 0 or [i for i, _ in rest] != list(range(len(rest))):
        raise SceneFormatError("f_rest_* properties do not form a full SH block", offset=header.vertex_line_offset, property_name="f_rest_0")
    known = set(REQUIRED_FIELDS) | {n for _, n in rest}

    n = len(vertex)
    positions = np.stack([vertex[f] for f in POSITION_FIELDS], axis=1).astype(np.float64) if n else np.zeros((0, 3))
    raw_opacity = np.asarray(vertex["opacity"]).copy()
    raw_scales = np.stack([vertex[f] for f in SCALE_FIELDS], axis=1) if n else np.zeros((0, 3), np.float32)
    raw_rot = np.stack([vertex[f] for f in ROT_FIELDS], axis=1) if n else np.zeros((0, 4), np.float32)

    rot = raw_rot.astype(np.float64)
    norms = np.linalg.norm(rot, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise SceneFormatError(f"zero-norm rotation at vertex {bad}", offset=header.length, property_name="rot_0")

    per_channel = len(rest) // 3
    sh = np.zeros((n, 3, per_channel + 1))
    for c, f in enumerate(DC_FIELDS):
        sh[:, c, 0] = vertex[f]
    for i, name in rest:
        c, j = divmod(i, per_channel)
        sh[:, c, j + 1] = vertex[name]

    extras = {name: np.asarray(vertex[name]).copy() for name in names if name not in known}
    dtypes = {name: vertex.dtype[name].str.lstrip("<>|=") for name in names}

    try:
        cloud = GaussianCloud(
            positions=positions,
            opacities=expit(raw_opacity.astype(np.float64)),
            scales=np.exp(raw_scales.astype(np.float64)),
            rotations=rot / norms[:, None] if n else rot,
            sh_coeffs=sh,
            extras=extras,
            raw=RawGaussianAttributes(opacity=raw_opacity, scales=raw_scales, rotations=raw_rot, dtypes=dtypes),
        )
    except PreconditionError as e:
        raise SceneFormatError(f"activated values violate invariants: {e.message}", offset=header.length)

    logger.debug("Parsed Gaussian PLY", extra={"count": cloud.count, "format": header.fmt, "extras": sorted(extras)})
    return cloud


def _ply_dtype(arr: np.ndarray, name: str) -> np.dtype:
    if arr.dtype == np.bool_:
        return np.dtype("u1")
    if arr.dtype.kind in "iu" and arr.dtype.itemsize == 8:
        info = np.iinfo(np.int32)
        if arr.size and (arr.min() < info.min or arr.max() > info.max):
            raise PreconditionError(f"extra field {name} does not fit in a 32-bit PLY integer")
        return np.dtype("i4")
    if arr.dtype.str.lstrip("<>|=") in _PLY_TYPES.values():
        return arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    raise PreconditionError(f"extra field {name} has unsupported dtype {arr.dtype}")


def write_gaussian_ply(
    cloud: GaussianCloud,
    extra_fields: Optional[Mapping[str, np.ndarray]] = None,
    text: bool = False,
) -> bytes:
    """Inverse of parse_gaussian_ply; extra_fields become extra vertex properties"""
    n = cloud.count
    extras: Dict[str, np.ndarray] = dict(cloud.extras)
    for name, values in (extra_fields or {}).items():
        values = np.asarray(values)
        if values.shape != (n,):
            raise PreconditionError(f"extra field {name} has length {len(values)}, expected {n}")
        if name in REQUIRED_FIELDS or _F_REST.match(name):
            raise PreconditionError(f"extra field {name} collides with a Gaussian property")
        extras[name] = values

    raw = cloud.raw
    if raw is not None:
        raw_opacity, raw_scales, raw_rot = raw.opacity, raw.scales, raw.rotations
        dtypes = raw.dtypes
    else:
        with np.errstate(divide="ignore"):
            raw_opacity = logit(cloud.opacities)
            raw_scales = np.log(cloud.scales)
        raw_rot = cloud.rotations
        dtypes = {}

    per_channel = cloud.sh_coeffs.shape[2] - 1
    columns: List[Tuple[str, np.ndarray]] = [(f, cloud.positions[:, i]) for i, f in enumerate(POSITION_FIELDS)]
    columns += [(f, cloud.sh_coeffs[:, i, 0]) for i, f in enumerate(DC_FIELDS)]
    columns += [(f"f_rest_{c * per_channel + j}", cloud.sh_coeffs[:, c, j + 1]) for c in range(3) for j in range(per_channel)]
    columns.append(("opacity", raw_opacity))
    columns += [(f, raw_scales[:, i]) for i, f in enumerate(SCALE_FIELDS)]
    columns += [(f, raw_rot[:, i]) for i, f in enumerate(ROT_FIELDS)]

    descr = [(name, "<" + dtypes.get(name, "f4")) for name, _ in columns]
    for name, values in extras.items():
        descr.append((name, _ply_dtype(values, name)))
        columns.append((name, values))

    table = np.empty(n, dtype=descr)
    for name, values in columns:
        table[name] = values

    buffer = io.BytesIO()
    element = PlyElement.describe(table, "vertex")
    PlyData([element], text=text, byte_order="<").write(buffer)
    return buffer.getvalue()
