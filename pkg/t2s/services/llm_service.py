import asyncio
import logging
from typing import TypedDict

import litellm
from litellm import acompletion
from tenacity import AsyncRetrying, RetryError, retry_if_exception_type, stop_after_attempt, wait_exponential

from t2s.config import Settings
from t2s.errors import TransportError
from t2s.utils.cache import ResponseCache, content_key
from t2s.utils.text import clean_text, truncate_tokens

litellm.suppress_debug_info = True
litellm.set_verbose = False

logger = logging.getLogger(__name__)

RETRYABLE_ERRORS = (
    TimeoutError,
    ConnectionError,
    ValueError,
    litellm.exceptions.APIConnectionError,
    litellm.exceptions.InternalServerError,
    litellm.exceptions.ServiceUnavailableError,
    litellm.exceptions.RateLimitError,
    litellm.exceptions.Timeout,
)


class LLMConfig(TypedDict):
    provider: str
    model: str
    api_key: str
    api_base: str
    temperature: float
    max_tokens: int
    timeout: int
    max_retries: int
    backoff_seconds: float


DEFAULT_CONFIG: LLMConfig = {
    "provider": "openai",
    "model": "gpt-4o-mini",
    "api_key": "",
    "api_base": "",
    "temperature": 0.7,
    "max_tokens": 30,
    "timeout": 30,
    "max_retries": 2,
    "backoff_seconds": 1.0,
}


class LLMService:
    @staticmethod
    def config_from_settings(settings: Settings, **overrides) -> LLMConfig:
        config: LLMConfig = {
            **DEFAULT_CONFIG,
            "provider": settings.llm_provider,
            "model": settings.llm_model,
            "api_key": settings.llm_api_key,
            "api_base": settings.llm_api_base,
        }
        config.update(overrides)  # type: ignore[typeddict-item]
        return config

    @staticmethod
    async def call_llm(messages: list, config: LLMConfig, seed: int | None = None) -> str:
        """Execute one completion through litellm and return the message text."""
        model = config["model"]
        if config["provider"] == "ollama" and not model.startswith("ollama/"):
            model = f"ollama/{model}"

        kwargs = {
            "model": model,
            "messages": messages,
            "max_tokens": config["max_tokens"],
            "temperature": config["temperature"],
            "timeout": config["timeout"],
            "n": 1,
            "drop_params": True,
        }
        if seed is not None:
            kwargs["seed"] = seed
        if config["api_key"]:
            kwargs["api_key"] = config["api_key"]
        if config["api_base"]:
            kwargs["api_base"] = config["api_base"]
        if config["provider"]:
            kwargs["custom_llm_provider"] = config["provider"]

        response = await acompletion(**kwargs)
        content = response.choices[0].message.content
        if not content:
            error_msg = f"LLM returned empty content. Model: {model}"
            logger.warning(error_msg)
            raise ValueError(error_msg)
        return content

    @classmethod
    async def _candidate(
        cls, prompt: str, index: int, config: LLMConfig, token_limit: int, cache: ResponseCache | None
    ) -> str:
        key = content_key(config["model"], prompt, index)
        if cache is not None and key in cache:
            return cache.get(key)

        messages = [{"role": "user", "content": prompt}]
        try:
            async for attempt in AsyncRetrying(
                retry=retry_if_exception_type(RETRYABLE_ERRORS),
                stop=stop_after_attempt(config["max_retries"] + 1),
                wait=wait_exponential(multiplier=config["backoff_seconds"], max=10),
            ):
                with attempt:
                    raw = await cls.call_llm(messages, config, seed=index)
                    caption = truncate_tokens(clean_text(raw), token_limit)
                    if not caption:
                        raise ValueError(f"Candidate {index} is empty after cleaning")
        except RetryError as e:
            cause = e.last_attempt.exception()
            raise TransportError(f"Candidate {index} failed after retries: {cause}", candidate_index=index) from cause
        except Exception as e:
            raise TransportError(f"Candidate {index} failed: {e}", candidate_index=index) from e

        if len(raw.split()) > token_limit:
            logger.debug(f"Candidate {index} truncated to {token_limit} tokens")
        if cache is not None:
            await cache.put(key, caption)
        return caption

    @classmethod
    async def generate_candidates(
        cls,
        prompt: str,
        n: int = 5,
        config: LLMConfig | None = None,
        token_limit: int = 30,
        cache: ResponseCache | None = None,
    ) -> list[str]:
        """n captions for one prompt, each at most token_limit whitespace tokens, retried per candidate."""
        config = config or DEFAULT_CONFIG.copy()
        return list(await asyncio.gather(*(cls._candidate(prompt, i, config, token_limit, cache) for i in range(n))))
