"""
Triptych composition, two-stage material prompts and fenced-answer parsing
"""
import math
import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.connectors.images import encode_png_base64
from src.core.errors import AnswerParseError, MaskError, PreconditionError
from src.models.schemas import PromptBundle, PromptKind

HIGHLIGHT = np.array([255, 0, 0], dtype=np.uint16)
CROP_PADDING = 0.05
GROUP_THRESHOLD = 60  # candidates listed flat up to this many
EXEMPLARS_PER_FAMILY = 12

SYSTEM_TEMPLATE = """You are a materials expert helping a robot reason about the physical properties of objects.
You are given photographs of an object and must identify what its parts are made of.
Answer conservatively and only with materials from the list you are given."""

DESCRIPTION_TEMPLATE = """Briefly describe the object in the image: what it is, what it is used for,
and which distinct parts it consists of. Keep the description under 80 words."""

PART_TEMPLATE = """Object description:
{context}

{images_hint}

Step 1: briefly describe the highlighted part based on the provided images.
Step 2: identify the material of the part, choosing strictly from the candidate list below,
and state its mass density, Young's modulus and Poisson's ratio.

Candidate materials:
{candidates}

Finish with a fenced block containing exactly one line in this form:
```
material: <id>; density: <kg/m3>; youngs_modulus: <Pa>; poisson: <val>
```"""

TRIPTYCH_HINT = (
    "The left image shows the whole object, the middle image shows the part highlighted in red, "
    "and the right image shows the part on its own."
)
LOCAL_HINT = "The image shows the part on its own."

REPAIR_INSTRUCTION = """Your previous answer could not be parsed. Reply again and end with a fenced block
containing exactly: material: <id>; density: <kg/m3>; youngs_modulus: <Pa>; poisson: <val>
where <id> is one of the candidate materials and the other values are plain numbers."""

_NUMBER = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_FENCE = re.compile(r"```(?:[a-zA-Z]+[ \t]*\n)?(.*?)```", re.DOTALL)
_ANSWER = re.compile(
    r"material\s*:\s*(?P<material>[^;\n]+?)\s*;"
    rf"\s*density\s*:\s*(?P<density>{_NUMBER})[^;\n]*;"
    rf"\s*youngs?_?\s*modulus\s*:\s*(?P<youngs_modulus>{_NUMBER})[^;\n]*;"
    rf"\s*poisson(?:_ratio)?\s*:\s*(?P<poisson>{_NUMBER})",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class ParsedAnswer:
    material: str
    density: float
    youngs_modulus: float
    poisson: float


def _check_mask(image: np.ndarray, bitmap: np.ndarray) -> np.ndarray:
    bitmap = np.asarray(bitmap, dtype=bool)
    if bitmap.shape != image.shape[:2]:
        raise MaskError(f"mask {bitmap.shape} does not match image {image.shape[:2]}")
    if not bitmap.any():
        raise MaskError("empty mask")
    return bitmap


def crop_box(bitmap: np.ndarray) -> Tuple[int, int, int, int]:
    """(y0, y1, x0, x1) half-open; bbox padded by 5% of its size per axis, clamped"""
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    y0, y1, x0, x1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    pad_y = math.ceil(CROP_PADDING * (y1 - y0))
    pad_x = math.ceil(CROP_PADDING * (x1 - x0))
    h, w = bitmap.shape
    return max(y0 - pad_y, 0), min(y1 + pad_y, h), max(x0 - pad_x, 0), min(x1 + pad_x, w)


def compose_triptych(image: np.ndarray, bitmap: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Original, red-highlighted, and cropped part on white"""
    image = np.asarray(image, dtype=np.uint8)
    bitmap = _check_mask(image, bitmap)

    highlighted = image.copy()
    blended = (image[bitmap].astype(np.uint16) + HIGHLIGHT) // 2
    highlighted[bitmap] = blended.astype(np.uint8)

    y0, y1, x0, x1 = crop_box(bitmap)
    crop = image[y0:y1, x0:x1].copy()
    crop[~bitmap[y0:y1, x0:x1]] = 255
    return image, highlighted, crop


def triptych_images(image: np.ndarray, bitmap: np.ndarray, global_local: bool = True) -> List[str]:
    original, highlighted, crop = compose_triptych(image, bitmap)
    if not global_local:
        return [encode_png_base64(crop)]
    return [encode_png_base64(original), encode_png_base64(highlighted), encode_png_base64(crop)]


def format_candidates(candidates: Sequence[str], families: Optional[Mapping[str, str]] = None) -> str:
    """Flat list for short inventories, family groups with capped exemplars otherwise"""
    if len(candidates) <= GROUP_THRESHOLD or not families:
        return "\n".join(f"- {name}" for name in candidates)

    groups: Dict[str, List[str]] = OrderedDict()
    for name in candidates:
        groups.setdefault(families.get(name, "other"), []).append(name)
    lines = []
    for family in sorted(groups):
        names = groups[family]
        shown = ", ".join(names[:EXEMPLARS_PER_FAMILY])
        more = f" (+{len(names) - EXEMPLARS_PER_FAMILY} more)" if len(names) > EXEMPLARS_PER_FAMILY else ""
        lines.append(f"- {family}: {shown}{more}")
    lines.append("If the exact material is not listed, answer with the family name.")
    return "\n".join(lines)


def build_prompt(
    part_context: str,
    candidates: Sequence[str],
    images: Sequence[str],
    families: Optional[Mapping[str, str]] = None,
) -> PromptBundle:
    """Describe-then-choose part prompt; one image means the local-only ablation"""
    if not candidates:
        raise PreconditionError("material candidate list is empty")
    local_only = len(images) == 1
    user_text = PART_TEMPLATE.format(
        context=part_context.strip() or "(no description available)",
        images_hint=LOCAL_HINT if local_only else TRIPTYCH_HINT,
        candidates=format_candidates(list(candidates), families),
    )
    return PromptBundle(
        kind=PromptKind.LOCAL_PART if local_only else PromptKind.PART,
        system_text=SYSTEM_TEMPLATE,
        user_text=user_text,
        images=list(images),
    )


def build_description_prompt(image: np.ndarray) -> PromptBundle:
    return PromptBundle(
        kind=PromptKind.DESCRIPTION,
        system_text=SYSTEM_TEMPLATE,
        user_text=DESCRIPTION_TEMPLATE,
        images=[encode_png_base64(np.asarray(image, dtype=np.uint8))],
    )


def parse_answer(text: str) -> ParsedAnswer:
    """Read the last well-formed fenced answer block"""
    for block in reversed(_FENCE.findall(text or "")):
        match = _ANSWER.search(block)
        if match:
            return ParsedAnswer(
                material=match.group("material").strip().strip("`'\"<>"),
                density=float(match.group("density")),
                youngs_modulus=float(match.group("youngs_modulus")),
                poisson=float(match.group("poisson")),
            )
    raise AnswerParseError("no fenced material answer found")


def to_messages(bundle: PromptBundle) -> List[dict]:
    """Chat-completions message list; images become base64 PNG data URLs"""
    content: List[dict] = [{"type": "text", "text": bundle.user_text}]
    for image in bundle.images:
        content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{image}"}})
    return [
        {"role": "system", "content": bundle.system_text},
        {"role": "user", "content": content},
    ]
