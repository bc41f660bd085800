"""
Live endpoint clients against mocked HTTP transports
"""
import asyncio
import json

import httpx
import numpy as np
import pytest

from src.agents.mask_filter import mask_to_rle
from src.agents.material_agent import LiveMaterialProvider, TokenBucket
from src.agents.prompting import REPAIR_INSTRUCTION, build_prompt
from src.agents.segmentation_client import SegmentationClient
from src.core.errors import AuthError, MaskError
from src.optimization.cache_manager import CacheManager

STEEL_ANSWER = "Brushed metal.\n```\nmaterial: steel; density: 7850; youngs_modulus: 2e11; poisson: 0.3\n```"


def chat_response(content):
    return httpx.Response(
        200,
        json={
            "id": "chatcmpl-test",
            "object": "chat.completion",
            "created": 0,
            "model": "test-model",
            "choices": [
                {"index": 0, "finish_reason": "stop", "message": {"role": "assistant", "content": content}}
            ],
        },
    )


class Endpoint:
    """Scripted responses; records every request body"""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        return self.responses.pop(0)

    def client(self) -> httpx.AsyncClient:
        return httpx.AsyncClient(transport=httpx.MockTransport(self))


@pytest.fixture
def bundle():
    """Part prompt with three placeholder images"""
    return build_prompt("a pot with a handle", ["oak", "steel"], ["AAA", "BBB", "CCC"])


@pytest.fixture
def no_sleep(mocker):
    """Backoff waits return immediately"""
    return mocker.patch("asyncio.sleep", new=mocker.AsyncMock())


def provider(library, endpoint, **kwargs):
    return LiveMaterialProvider(
        library,
        token="test-token",
        model="test-model",
        base_url="http://lmm.test/v1",
        requests_per_second=1000.0,
        http_client=endpoint.client(),
        **kwargs,
    )


class TestLiveMaterialProvider:
    """Test the chat-completions material provider"""

    def test_missing_token(self, library):
        """Test live mode without a token is an auth error"""
        with pytest.raises(AuthError):
            LiveMaterialProvider(library, token="", model="m", base_url="http://lmm.test/v1")

    @pytest.mark.asyncio
    async def test_well_formed_answer(self, library, bundle):
        """Test a fenced answer naming steel resolves to steel"""
        endpoint = Endpoint(chat_response(STEEL_ANSWER))
        lmm = provider(library, endpoint)
        annotation = await lmm.query_material(bundle, "v", 1)
        await lmm.aclose()

        assert annotation.material_id == "steel"
        assert annotation.confidence == 1.0
        assert annotation.properties_quoted == (7850.0, 2e11, 0.3)
        body = json.loads(endpoint.requests[0].content)
        assert body["model"] == "test-model"
        assert body["temperature"] == 0
        assert endpoint.requests[0].headers["authorization"] == "Bearer test-token"
        images = [p for p in body["messages"][1]["content"] if p["type"] == "image_url"]
        assert len(images) == 3

    @pytest.mark.asyncio
    async def test_unknown_material(self, library, bundle):
        """Test an answer outside the library is unresolved"""
        answer = "```\nmaterial: shiny stuff; density: 1; youngs_modulus: 1; poisson: 0.1\n```"
        lmm = provider(library, Endpoint(chat_response(answer)))
        annotation = await lmm.query_material(bundle, "v", 1)
        assert annotation.unresolved
        assert annotation.raw_material_text == "shiny stuff"

    @pytest.mark.asyncio
    async def test_repair_retry(self, library, bundle):
        """Test an unparseable answer is retried with the repair instruction"""
        endpoint = Endpoint(chat_response("I think it is metal."), chat_response(STEEL_ANSWER))
        annotation = await provider(library, endpoint).query_material(bundle, "v", 1)

        assert annotation.material_id == "steel"
        assert annotation.confidence == 0.5
        retry = json.loads(endpoint.requests[1].content)["messages"]
        assert retry[-2] == {"role": "assistant", "content": "I think it is metal."}
        assert retry[-1]["content"] == REPAIR_INSTRUCTION

    @pytest.mark.asyncio
    async def test_retries_exhausted(self, library, bundle):
        """Test the segment is unresolved after retry_max repairs"""
        endpoint = Endpoint(*[chat_response("no idea") for _ in range(3)])
        annotation = await provider(library, endpoint, retry_max=2).query_material(bundle, "v", 1)
        assert annotation.unresolved
        assert len(endpoint.requests) == 3

    @pytest.mark.asyncio
    async def test_rate_limit_honors_retry_after(self, library, bundle, no_sleep):
        """Test a 429 waits retry-after seconds and retries"""
        endpoint = Endpoint(
            httpx.Response(429, headers={"retry-after": "7"}, json={"error": {"message": "slow down"}}),
            chat_response(STEEL_ANSWER),
        )
        annotation = await provider(library, endpoint).query_material(bundle, "v", 1)
        assert annotation.material_id == "steel"
        assert len(endpoint.requests) == 2
        no_sleep.assert_any_await(7.0)

    @pytest.mark.asyncio
    async def test_server_error_retried(self, library, bundle, no_sleep):
        """Test 5xx responses are retried with backoff"""
        endpoint = Endpoint(
            httpx.Response(503, json={"error": {"message": "busy"}}),
            chat_response(STEEL_ANSWER),
        )
        annotation = await provider(library, endpoint).query_material(bundle, "v", 1)
        assert annotation.material_id == "steel"

    @pytest.mark.asyncio
    async def test_rejected_credentials(self, library, bundle):
        """Test 401 maps to an auth error"""
        endpoint = Endpoint(httpx.Response(401, json={"error": {"message": "bad key"}}))
        with pytest.raises(AuthError):
            await provider(library, endpoint).query_material(bundle, "v", 1)

    @pytest.mark.asyncio
    async def test_cache_reused(self, library, bundle, tmp_path):
        """Test a cached response is served without a request"""
        cache = CacheManager(tmp_path / "cache")
        first = Endpoint(chat_response(STEEL_ANSWER))
        await provider(library, first, cache=cache).query_material(bundle, "v", 1)

        second = Endpoint()
        annotation = await provider(library, second, cache=cache).query_material(bundle, "v", 1)
        assert annotation.material_id == "steel"
        assert second.requests == []

    @pytest.mark.asyncio
    async def test_describe(self, library):
        """Test descriptions are stripped model text"""
        lmm = provider(library, Endpoint(chat_response("  A cooking pot.\n")))
        assert await lmm.describe("v", np.zeros((4, 4, 3), dtype=np.uint8)) == "A cooking pot."


def segmentation_body(shape):
    whole = np.ones(shape, dtype=bool)
    left = np.zeros(shape, dtype=bool)
    left[:, : shape[1] // 2] = True
    right = ~left
    return {
        "levels": [
            {"level": "part", "masks": [
                {"segmentation": mask_to_rle(left), "predicted_iou": 0.95, "stability_score": 0.97},
                {"segmentation": mask_to_rle(right), "predicted_iou": 0.9, "stability_score": 0.96},
            ]},
            {"level": "whole", "masks": [{"segmentation": mask_to_rle(whole)}]},
        ]
    }


class TestSegmentationClient:
    """Test the segmentation endpoint client"""

    @pytest.mark.asyncio
    async def test_hierarchy(self):
        """Test levels come back coarse to fine with decoded masks"""
        image = np.zeros((6, 8, 3), dtype=np.uint8)
        endpoint = Endpoint(httpx.Response(200, json=segmentation_body((6, 8))))
        client = SegmentationClient("seg-token", "http://seg.test/", http_client=endpoint.client())
        hierarchy = await client.segment("v", image)
        await client.aclose()

        assert [len(level) for level in hierarchy] == [1, 2]
        part = hierarchy[1]
        assert part.by_id(1).bitmap[:, :4].all()
        assert part.by_id(2).predicted_iou == 0.9
        request = endpoint.requests[0]
        assert str(request.url) == "http://seg.test/v1/segment"
        assert request.headers["authorization"] == "Bearer seg-token"
        assert json.loads(request.content)["points_per_side"] == 32

    @pytest.mark.asyncio
    async def test_rate_limited_then_ok(self, no_sleep):
        """Test 429 is retried after its retry-after delay"""
        endpoint = Endpoint(
            httpx.Response(429, headers={"retry-after": "2"}),
            httpx.Response(200, json=segmentation_body((4, 4))),
        )
        client = SegmentationClient("seg-token", "http://seg.test", http_client=endpoint.client())
        hierarchy = await client.segment("v", np.zeros((4, 4, 3), dtype=np.uint8))
        assert len(hierarchy) == 2
        no_sleep.assert_any_await(2.0)

    @pytest.mark.asyncio
    async def test_forbidden(self):
        """Test 403 maps to an auth error"""
        endpoint = Endpoint(httpx.Response(403))
        client = SegmentationClient("seg-token", "http://seg.test", http_client=endpoint.client())
        with pytest.raises(AuthError):
            await client.segment("v", np.zeros((4, 4, 3), dtype=np.uint8))

    @pytest.mark.asyncio
    async def test_mask_size_mismatch(self):
        """Test endpoint masks must match the image size"""
        endpoint = Endpoint(httpx.Response(200, json=segmentation_body((5, 5))))
        client = SegmentationClient("seg-token", "http://seg.test", http_client=endpoint.client())
        with pytest.raises(MaskError):
            await client.segment("v", np.zeros((4, 4, 3), dtype=np.uint8))

    def test_missing_token(self):
        """Test live segmentation without a token is an auth error"""
        with pytest.raises(AuthError):
            SegmentationClient("", "http://seg.test")


class TestTokenBucket:
    """Test the request rate limiter"""

    def test_built_outside_event_loop(self):
        """Test a bucket built before any loop serves contended acquires in successive loops"""
        bucket = TokenBucket(rate=1000.0, capacity=1.0)
        assert bucket._lock is None

        async def burst():
            await asyncio.gather(*(bucket.acquire() for _ in range(3)))
            return asyncio.get_running_loop()

        first = asyncio.run(burst())
        second = asyncio.run(burst())
        assert first is not second
        assert bucket._loop is second
