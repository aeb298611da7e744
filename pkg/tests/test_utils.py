from t2s.utils.cache import ResponseCache, content_key
from t2s.utils.text import clean_text, count_tokens, tokenize, truncate_tokens


def test_clean_text():
    assert clean_text('  "Rising\x07 steadily\n\n then flat."  ') == "Rising steadily then flat."
    assert clean_text("```\ncode\n```Falls sharply") == "Falls sharply"
    assert clean_text("") == ""


def test_tokenize_lowercases_and_keeps_decimals():
    assert tokenize("Rises to 3.5, then FALLS") == ["rises", "to", "3.5", "then", "falls"]


def test_truncate_tokens():
    assert truncate_tokens("a b c d", 2) == "a b"
    assert truncate_tokens("a  b", 5) == "a b"
    assert count_tokens("one two  three") == 3


def test_content_key_is_stable_and_separated():
    assert content_key("m", "p", 0) == content_key("m", "p", 0)
    assert content_key("ab", "c") != content_key("a", "bc")


async def test_response_cache_persists(tmp_path):
    path = tmp_path / "cache" / "responses.jsonl"
    cache = ResponseCache(path)
    await cache.put("k1", "first")
    await cache.put("k2", [1.0, 2.0])
    await cache.put("k1", "second")

    reloaded = ResponseCache(path)
    assert reloaded.get("k1") == "second"
    assert reloaded.get("k2") == [1.0, 2.0]
    assert "missing" not in reloaded


def test_corrupt_cache_lines_are_skipped(tmp_path, caplog):
    path = tmp_path / "responses.jsonl"
    path.write_text('{"key": "a", "value": 1}\nnot json\n{"value": 2}\n\n{"key": "b", "value": 3}\n')

    cache = ResponseCache(path)

    assert len(cache) == 2
    assert "line 2" in caplog.text


async def test_memory_only_cache():
    cache = ResponseCache(None)
    await cache.put("k", "v")
    assert cache.get("k") == "v"


async def test_evicted_entries_are_read_back_from_disk(tmp_path):
    path = tmp_path / "responses.jsonl"
    cache = ResponseCache(path, maxsize=2)
    for i in range(5):
        await cache.put(f"k{i}", [float(i)])

    assert len(cache) == 5
    assert cache.get("k0") == [0.0]

    reloaded = ResponseCache(path, maxsize=3)
    assert len(reloaded) == 5
    assert all(f"k{i}" in reloaded for i in range(5))
    assert [reloaded.get(f"k{i}") for i in range(5)] == [[0.0], [1.0], [2.0], [3.0], [4.0]]


async def test_overwritten_key_reads_latest_after_eviction(tmp_path):
    path = tmp_path / "responses.jsonl"
    cache = ResponseCache(path, maxsize=1)
    await cache.put("a", "old")
    await cache.put("a", "new")
    await cache.put("b", "other")

    assert cache.get("a") == "new"
    assert ResponseCache(path, maxsize=1).get("a") == "new"
