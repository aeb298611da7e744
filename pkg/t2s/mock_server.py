"""
In-process stand-in for the embedding and chat-completion endpoints.

Serve it through `httpx.ASGITransport(app=create_mock_app(...))`; there is no daemon mode.
"""

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

from fastapi import APIRouter, FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from t2s.services.text_service import encode_offline

logger = logging.getLogger(__name__)

DEFAULT_CAPTIONS = (
    "The series rises steadily from start to end.",
    "A steady upward trend across the fragment.",
    "Values increase gradually with little noise.",
    "Mostly flat with a small bump in the middle.",
    "Sharp fall followed by a slow recovery.",
)

CaptionSource = Sequence[str] | Callable[[str, int], str]


class EmbeddingRequest(BaseModel):
    model: str
    input: list[str] | str


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: list[ChatMessage]
    n: int = 1
    seed: int | None = None
    max_tokens: int | None = None


@dataclass
class MockState:
    dim: int
    captions: CaptionSource
    vectors: Mapping[str, list[float]]
    fail_first: int
    embedding_calls: int = 0
    chat_calls: int = 0


def _should_fail(state: MockState, calls: int) -> bool:
    return calls <= state.fail_first


def _caption(state: MockState, prompt: str, index: int) -> str:
    if callable(state.captions):
        return state.captions(prompt, index)
    return state.captions[index % len(state.captions)]


router = APIRouter()


@router.post("/embeddings")
async def embeddings(body: EmbeddingRequest, request: Request):
    state: MockState = request.app.state.mock
    state.embedding_calls += 1
    if _should_fail(state, state.embedding_calls):
        logger.debug(f"Mock embeddings: injected failure on call {state.embedding_calls}")
        return JSONResponse({"error": "injected failure"}, status_code=500)

    texts = [body.input] if isinstance(body.input, str) else body.input
    data = []
    for i, text in enumerate(texts):
        vector = state.vectors.get(text)
        if vector is None:
            vector = encode_offline(text, state.dim).vector.tolist()
        data.append({"object": "embedding", "index": i, "embedding": list(vector)})
    return {"object": "list", "model": body.model, "data": data}


@router.post("/chat/completions")
async def chat_completions(body: ChatRequest, request: Request):
    state: MockState = request.app.state.mock
    state.chat_calls += 1
    if _should_fail(state, state.chat_calls):
        logger.debug(f"Mock chat: injected failure on call {state.chat_calls}")
        return JSONResponse({"error": "injected failure"}, status_code=500)

    prompt = body.messages[-1].content if body.messages else ""
    start = body.seed or 0
    choices = [
        {
            "index": i,
            "finish_reason": "stop",
            "message": {"role": "assistant", "content": _caption(state, prompt, start + i)},
        }
        for i in range(body.n)
    ]
    return {"id": f"mock-{state.chat_calls}", "object": "chat.completion", "model": body.model, "choices": choices}


def create_mock_app(
    dim: int = 64,
    captions: CaptionSource = DEFAULT_CAPTIONS,
    vectors: Mapping[str, list[float]] | None = None,
    fail_first: int = 0,
) -> FastAPI:
    """
    Build the mock app.

    `vectors` pins exact embeddings for given texts (others use the offline encoder);
    the first `fail_first` calls to each endpoint answer HTTP 500.
    """
    app = FastAPI(title="t2s mock endpoints")
    app.state.mock = MockState(dim=dim, captions=captions, vectors=dict(vectors or {}), fail_first=fail_first)
    app.include_router(router)
    return app
