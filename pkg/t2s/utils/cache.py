import asyncio
import hashlib
import json
import logging
from pathlib import Path
from typing import Any

import aiofiles
from cachetools import LRUCache

logger = logging.getLogger(__name__)


def content_key(*parts: str | int) -> str:
    """Stable sha256 key over the given parts."""
    digest = hashlib.sha256()
    for part in parts:
        digest.update(str(part).encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def _encode(key: str, value: Any) -> bytes:
    return (json.dumps({"key": key, "value": value}, separators=(",", ":")) + "\n").encode("utf-8")


class ResponseCache:
    """
    Append-only JSONL store of remote responses with an in-memory LRU front.

    Each line is `{"key": ..., "value": ...}`; later lines win on reload. Every key on
    disk stays addressable through a key -> byte offset index, so values evicted from
    the LRU are read back from the file. Without a path the cache is memory-only and
    never evicts.
    """

    def __init__(self, path: str | Path | None, maxsize: int = 100_000):
        self.path = Path(path) if path else None
        self._memory: LRUCache | dict = LRUCache(maxsize=maxsize) if self.path else {}
        self._offsets: dict[str, int] = {}
        self._lock = asyncio.Lock()
        self._load()

    def _load(self) -> None:
        if self.path is None or not self.path.is_file():
            return
        offset = 0
        with self.path.open("rb") as fh:
            for line_no, raw in enumerate(fh, start=1):
                start, offset = offset, offset + len(raw)
                if not raw.strip():
                    continue
                try:
                    entry = json.loads(raw)
                    key = entry["key"]
                    self._memory[key] = entry["value"]
                    self._offsets[key] = start
                except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError):
                    logger.warning(f"Skipping corrupt cache line {line_no} in {self.path}")
        logger.debug(f"Indexed {len(self._offsets)} cache entries from {self.path}")

    def _read_at(self, offset: int) -> Any:
        with self.path.open("rb") as fh:
            fh.seek(offset)
            return json.loads(fh.readline())["value"]

    def get(self, key: str) -> Any | None:
        if key in self._memory:
            return self._memory[key]
        offset = self._offsets.get(key)
        if offset is None:
            return None
        value = self._read_at(offset)
        self._memory[key] = value
        return value

    def __contains__(self, key: str) -> bool:
        return key in self._offsets or key in self._memory

    def __len__(self) -> int:
        return len(self._offsets) if self.path else len(self._memory)

    async def put(self, key: str, value: Any) -> None:
        self._memory[key] = value
        if self.path is None:
            return
        line = _encode(key, value)
        async with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(self.path, "ab") as fh:
                offset = await fh.tell()
                await fh.write(line)
            self._offsets[key] = offset
