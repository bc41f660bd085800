"""
Image and 16-bit label map I/O (Pillow)
"""
import base64
import io
from pathlib import Path
from typing import Dict, Union

import numpy as np
from PIL import Image

from src.core.errors import DataError, MaskError


def read_image(path: Union[str, Path]) -> np.ndarray:
    """RGB uint8 array (height, width, 3)"""
    try:
        with Image.open(path) as img:
            return np.array(img.convert("RGB"))
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read image {path}: {e}")


def encode_png(image: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image)).save(buffer, format="PNG")
    return buffer.getvalue()


def encode_png_base64(image: np.ndarray) -> str:
    return base64.b64encode(encode_png(image)).decode("ascii")


def read_label_png(path: Union[str, Path]) -> np.ndarray:
    """Integer label image -> int64 array; 0 means unassigned"""
    try:
        with Image.open(path) as img:
            if img.mode not in ("I;16", "I;16B", "I", "L", "P"):
                raise MaskError(f"label image {path} has unsupported mode {img.mode}")
            labels = np.array(img).astype(np.int64)
    except OSError as e:
        raise MaskError(f"cannot read label image {path}: {e}")
    if labels.ndim != 2:
        raise MaskError(f"label image {path} must be single-channel")
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise MaskError(f"label image {path} has values outside the 16-bit range")
    return labels


def label_png_bytes(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise MaskError("labels must fit in 16 bits")
    return encode_png(labels.astype(np.uint16))


def write_label_png(path: Union[str, Path], labels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(label_png_bytes(labels))


def read_legend(path: Union[str, Path]) -> Dict[int, str]:
    """Legend lines: `ordinal label`"""
    legend: Dict[int, str] = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or not parts[0].isdigit():
            raise DataError(f"{path}:{number}: expected `ordinal label`")
        legend[int(parts[0])] = parts[1]
    return legend


def write_legend(path: Union[str, Path], legend: Dict[int, str]) -> None:
    lines = [f"{ordinal} {label}" for ordinal, label in sorted(legend.items())]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
