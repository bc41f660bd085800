"""
Material providers: deterministic fixtures or a live chat-completions LMM
"""
import asyncio
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import backoff
import httpx
import numpy as np
import openai
from openai import AsyncOpenAI

from src.agents.prompting import REPAIR_INSTRUCTION, build_description_prompt, parse_answer, to_messages
from src.core.errors import AnswerParseError, AuthError, DataError, EndpointError, RateLimitError, TransportError
from src.core.material_library import MaterialLibrary
from src.models.schemas import PromptBundle, SegmentAnnotation
from src.monitoring.telemetry import track_outcome
from src.optimization.cache_manager import CacheManager
from src.utils.logger import logger

RETRY_MAX = 2
REPAIRED_CONFIDENCE = 0.5
TRANSPORT_TRIES = 5
RATE_LIMIT_TRIES = 5


class TokenBucket:
    """Async token bucket; capacity defaults to one second of tokens"""

    def __init__(self, rate: float, capacity: Optional[float] = None):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(rate, 1.0)
        self._tokens = self.capacity
        self._updated = time.monotonic()
        self._lock: Optional[asyncio.Lock] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None

    def _loop_lock(self) -> asyncio.Lock:
        """Lock bound to the running event loop"""
        loop = asyncio.get_running_loop()
        if self._lock is None or self._loop is not loop:
            self._lock, self._loop = asyncio.Lock(), loop
        return self._lock

    async def acquire(self) -> None:
        async with self._loop_lock():
            while True:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                await asyncio.sleep((1.0 - self._tokens) / self.rate)


class MaterialProvider(ABC):
    """Source of whole-object descriptions and per-segment annotations"""

    def __init__(self, library: MaterialLibrary):
        self.library = library

    @abstractmethod
    async def describe(self, view_id: str, image: np.ndarray) -> str:
        ...

    @abstractmethod
    async def query_material(self, bundle: PromptBundle, view_id: str, segment_id: int) -> SegmentAnnotation:
        ...

    def _annotation(self, view_id: str, segment_id: int, text: str, confidence: float, quoted=None) -> SegmentAnnotation:
        record = self.library.try_resolve(text)
        if record is None:
            logger.warning(
                "Material answer does not resolve",
                extra={"view_id": view_id, "segment_id": segment_id, "answer": text},
            )
            return SegmentAnnotation(
                view_id=view_id, segment_id=segment_id, raw_material_text=text,
                properties_quoted=quoted, confidence=0.0, unresolved=True,
            )
        return SegmentAnnotation(
            view_id=view_id, segment_id=segment_id, material_id=record.material_id,
            raw_material_text=text, properties_quoted=quoted, confidence=confidence,
        )


class FixtureMaterialProvider(MaterialProvider):
    """
    Reads <view_id>.txt files of `segment_id material_id [confidence]` lines
    and optional <view_id>.description.txt
    """

    def __init__(self, fixtures_dir: Path, library: MaterialLibrary):
        super().__init__(library)
        self.fixtures_dir = Path(fixtures_dir)
        self._entries: Dict[str, Dict[int, Tuple[str, float]]] = {}

    def entries(self, view_id: str) -> Dict[int, Tuple[str, float]]:
        if view_id not in self._entries:
            path = self.fixtures_dir / f"{view_id}.txt"
            try:
                lines = path.read_text(encoding="utf-8").splitlines()
            except OSError as e:
                raise DataError(f"no fixture annotations for view {view_id}: {e}")
            table: Dict[int, Tuple[str, float]] = {}
            for number, line in enumerate(lines, 1):
                parts = line.split("#", 1)[0].split()
                if not parts:
                    continue
                try:
                    segment_id = int(parts[0])
                    confidence = float(parts[2]) if len(parts) > 2 else 1.0
                    material = parts[1]
                except (ValueError, IndexError):
                    raise DataError(f"{path}:{number}: expected `segment_id material_id [confidence]`")
                if segment_id in table:
                    raise DataError(f"{path}:{number}: duplicate segment id {segment_id}")
                table[segment_id] = (material, confidence)
            self._entries[view_id] = table
        return self._entries[view_id]

    async def describe(self, view_id: str, image: np.ndarray) -> str:
        path = self.fixtures_dir / f"{view_id}.description.txt"
        return path.read_text(encoding="utf-8").strip() if path.exists() else ""

    @track_outcome
    async def query_material(self, bundle: PromptBundle, view_id: str, segment_id: int) -> SegmentAnnotation:
        entry = self.entries(view_id).get(segment_id)
        if entry is None:
            return SegmentAnnotation(view_id=view_id, segment_id=segment_id, confidence=0.0, unresolved=True)
        material, confidence = entry
        return self._annotation(view_id, segment_id, material, confidence)


def _retry_after(response: Optional[httpx.Response]) -> Optional[float]:
    if response is None:
        return None
    value = response.headers.get("retry-after")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


class LiveMaterialProvider(MaterialProvider):
    """OpenAI-compatible chat completions with image parts as data URLs"""

    def __init__(
        self,
        library: MaterialLibrary,
        token: str,
        model: str,
        base_url: str,
        timeout: float = 60.0,
        retry_max: int = RETRY_MAX,
        requests_per_second: float = 2.0,
        cache: Optional[CacheManager] = None,
        http_client: Optional[httpx.AsyncClient] = None,
    ):
        super().__init__(library)
        if not token:
            raise AuthError("GSPROP_LMM_TOKEN is not set; live mode needs an LMM token")
        self.model = model
        self.retry_max = retry_max
        self.cache = cache or CacheManager(None)
        self.bucket = TokenBucket(requests_per_second)
        self.client = AsyncOpenAI(
            api_key=token,
            base_url=base_url,
            timeout=timeout,
            max_retries=0,
            http_client=http_client,
        )
        logger.info("LiveMaterialProvider initialized", extra={"model": model, "base_url": base_url})

    @backoff.on_exception(backoff.expo, TransportError, max_tries=TRANSPORT_TRIES, jitter=backoff.full_jitter)
    @backoff.on_exception(
        backoff.runtime,
        RateLimitError,
        value=lambda e: e.retry_after if e.retry_after is not None else 1.0,
        max_tries=RATE_LIMIT_TRIES,
        jitter=None,
    )
    async def _post(self, messages: List[dict]) -> str:
        await self.bucket.acquire()
        try:
            response = await self.client.chat.completions.create(
                model=self.model,
                messages=messages,
                temperature=0,
            )
        except (openai.AuthenticationError, openai.PermissionDeniedError) as e:
            raise AuthError(f"LMM endpoint rejected credentials: {e}")
        except openai.RateLimitError as e:
            raise RateLimitError("LMM endpoint rate limit", retry_after=_retry_after(e.response))
        except openai.InternalServerError as e:
            raise TransportError(f"LMM endpoint error {e.status_code}")
        except openai.APIConnectionError as e:
            raise TransportError(f"LMM endpoint unreachable: {e}")
        except openai.APIStatusError as e:
            raise EndpointError(f"LMM endpoint returned {e.status_code}: {e.message}")
        if not response.choices:
            return ""
        return response.choices[0].message.content or ""

    async def _complete(self, messages: List[dict]) -> str:
        key = self.cache._generate_key("lmm", {"model": self.model, "temperature": 0, "messages": messages})
        cached = self.cache.get(key)
        if cached is not None:
            return cached["content"]
        content = await self._post(messages)
        self.cache.set(key, {"content": content})
        return content

    async def describe(self, view_id: str, image: np.ndarray) -> str:
        text = await self._complete(to_messages(build_description_prompt(image)))
        return text.strip()

    @track_outcome
    async def query_material(self, bundle: PromptBundle, view_id: str, segment_id: int) -> SegmentAnnotation:
        """Parse the fenced answer, appending a repair instruction on failure"""
        messages = to_messages(bundle)
        text = ""
        for attempt in range(self.retry_max + 1):
            text = await self._complete(messages)
            try:
                answer = parse_answer(text)
            except AnswerParseError:
                logger.warning(
                    "Unparseable material answer",
                    extra={"view_id": view_id, "segment_id": segment_id, "attempt": attempt},
                )
                messages = messages + [
                    {"role": "assistant", "content": text},
                    {"role": "user", "content": REPAIR_INSTRUCTION},
                ]
                continue
            confidence = 1.0 if attempt == 0 else REPAIRED_CONFIDENCE
            quoted = (answer.density, answer.youngs_modulus, answer.poisson)
            return self._annotation(view_id, segment_id, answer.material, confidence, quoted)

        return SegmentAnnotation(
            view_id=view_id, segment_id=segment_id, raw_material_text=text, confidence=0.0, unresolved=True,
        )

    async def aclose(self) -> None:
        await self.client.close()
