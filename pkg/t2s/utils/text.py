import re

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[.'][a-z0-9]+)*")


def clean_text(text: str) -> str:
    """
    Cleans an LLM caption: strips code fences, surrounding quotes, control characters
    and excessive whitespace.
    """
    if not text:
        return ""

    text = re.sub(r"```.*?```", "", text, flags=re.DOTALL)

    # C0 control codes and DEL, except tab/newline/carriage return
    text = re.sub(r"[\x00-\x08\x0B\x0C\x0E-\x1F\x7F]", "", text)

    text = re.sub(r"\s+", " ", text).strip()
    return text.strip("\"'` ")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens used by the offline text encoder."""
    return _TOKEN_RE.findall(text.lower())


def count_tokens(text: str) -> int:
    return len(text.split())


def truncate_tokens(text: str, limit: int) -> str:
    """Keep at most `limit` whitespace-separated tokens."""
    tokens = text.split()
    if len(tokens) <= limit:
        return " ".join(tokens)
    return " ".join(tokens[:limit])
