"""
Mask acquisition: HTTP segmentation endpoint or scene_io mask fixtures
"""
from pathlib import Path
from typing import List, Optional

import backoff
import httpx
import numpy as np

from src.agents.mask_filter import rle_to_mask
from src.connectors.images import encode_png_base64
from src.connectors.masks import load_mask_set
from src.core.errors import AuthError, EndpointError, MaskError, RateLimitError, TransportError
from src.models.scene import CameraModel, Mask, MaskSet
from src.utils.logger import logger

POINTS_PER_SIDE = 32
LEVELS = ("whole", "part", "subpart")


class FixtureSegmentationClient:
    """Reads <masks_dir>/<view_id>.png label images with their sidecars"""

    def __init__(self, masks_dir: Path):
        self.masks_dir = Path(masks_dir)

    async def segment(self, view_id: str, image: np.ndarray, camera: Optional[CameraModel] = None) -> List[MaskSet]:
        path = self.masks_dir / f"{view_id}.png"
        if not path.exists():
            raise MaskError(f"no mask fixture for view {view_id} at {path}")
        return [load_mask_set(path, view_id, camera=camera)]


class SegmentationClient:
    """
    POST {base_url}/v1/segment with a base64 PNG and grid parameters;
    the response carries one RLE mask list per hierarchy level
    """

    def __init__(
        self,
        token: str,
        base_url: str,
        timeout: float = 60.0,
        points_per_side: int = POINTS_PER_SIDE,
        http_client: Optional[httpx.AsyncClient] = None,
    ):
        if not token:
            raise AuthError("GSPROP_SEG_TOKEN is not set; live mode needs a segmentation token")
        self.points_per_side = points_per_side
        self.client = http_client or httpx.AsyncClient(timeout=timeout)
        self.url = base_url.rstrip("/") + "/v1/segment"
        self.headers = {"Authorization": f"Bearer {token}"}

    @backoff.on_exception(backoff.expo, TransportError, max_tries=5, jitter=backoff.full_jitter)
    @backoff.on_exception(
        backoff.runtime,
        RateLimitError,
        value=lambda e: e.retry_after if e.retry_after is not None else 1.0,
        max_tries=5,
        jitter=None,
    )
    async def _post(self, payload: dict) -> dict:
        try:
            response = await self.client.post(self.url, json=payload, headers=self.headers)
        except httpx.TransportError as e:
            raise TransportError(f"segmentation endpoint unreachable: {e}")

        if response.status_code in (401, 403):
            raise AuthError(f"segmentation endpoint rejected credentials ({response.status_code})")
        if response.status_code == 429:
            retry_after = response.headers.get("retry-after")
            try:
                delay = float(retry_after) if retry_after is not None else None
            except ValueError:
                delay = None
            raise RateLimitError("segmentation endpoint rate limit", retry_after=delay)
        if response.status_code >= 500:
            raise TransportError(f"segmentation endpoint error {response.status_code}")
        if response.status_code != 200:
            raise EndpointError(f"segmentation endpoint returned {response.status_code}")
        try:
            return response.json()
        except ValueError as e:
            raise EndpointError(f"segmentation endpoint returned invalid JSON: {e}")

    async def segment(self, view_id: str, image: np.ndarray, camera: Optional[CameraModel] = None) -> List[MaskSet]:
        """Mask hierarchy ordered coarse to fine"""
        payload = {
            "image": encode_png_base64(image),
            "points_per_side": self.points_per_side,
            "levels": list(LEVELS),
        }
        body = await self._post(payload)
        levels = body.get("levels")
        if not isinstance(levels, list) or not levels:
            raise EndpointError("segmentation response has no 'levels'")

        rank = {name: i for i, name in enumerate(LEVELS)}
        levels = sorted(levels, key=lambda level: rank.get(level.get("level"), len(LEVELS)))
        hierarchy = []
        for level in levels:
            masks = []
            for segment_id, entry in enumerate(level.get("masks", []), 1):
                bitmap = rle_to_mask(entry["segmentation"])
                if bitmap.shape != image.shape[:2]:
                    raise MaskError(f"view {view_id}: endpoint mask {bitmap.shape} does not match image {image.shape[:2]}")
                masks.append(
                    Mask(
                        segment_id=segment_id,
                        bitmap=bitmap,
                        predicted_iou=float(entry.get("predicted_iou", 1.0)),
                        stability=float(entry.get("stability_score", 1.0)),
                    )
                )
            hierarchy.append(MaskSet(view_id=view_id, masks=tuple(masks)))
        logger.info(
            "Segmented view",
            extra={"view_id": view_id, "levels": [len(level) for level in hierarchy]},
        )
        return hierarchy

    async def aclose(self) -> None:
        await self.client.aclose()
