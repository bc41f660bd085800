"""
On-disk response cache keyed by request hash
"""
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional

from src.utils.logger import logger


class CacheManager:
    """File-backed cache; one JSON document per key"""

    def __init__(self, cache_dir: Optional[Path]):
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    @property
    def enabled(self) -> bool:
        return self.cache_dir is not None

    def _generate_key(self, prefix: str, params: Dict[str, Any]) -> str:
        """Generate cache key from request parameters"""
        payload = json.dumps(params, sort_keys=True, separators=(",", ":"), default=str)
        return f"{prefix}-{hashlib.sha256(payload.encode('utf-8')).hexdigest()}"

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> Optional[Any]:
        """Get value from cache"""
        if not self.enabled:
            return None
        path = self._path(key)
        try:
            with open(path, "r", encoding="utf-8") as f:
                value = json.load(f)
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError) as e:
            logger.error("Cache get error", extra={"key": key, "error": str(e)})
            return None
        logger.debug("Cache hit", extra={"key": key})
        return value

    def set(self, key: str, value: Any) -> None:
        """Set value in cache"""
        if not self.enabled:
            return
        try:
            # Atomic replace
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(value, f, sort_keys=True)
            os.replace(tmp, self._path(key))
        except OSError as e:
            logger.error("Cache set error", extra={"key": key, "error": str(e)})
