"""Text normalisation shared by ingestion, the KB indexes and the tokenizer."""

import html
import re

_TAG = re.compile(r"<[^>]*>")
_SPACE = re.compile(r"\s+")
_KEEP_PUNCT = frozenset(" -.,'")
_TOKEN = re.compile(r"\w+")


def clean_text(text: str) -> str:
    """Lower-case, drop HTML tags and entities, strip special characters.

    Alphanumerics, space, hyphen, period, comma and apostrophe survive.
    The result is a fixed point: ``clean_text(clean_text(s)) == clean_text(s)``.
    """
    s = _TAG.sub(" ", html.unescape(text))
    s = _SPACE.sub(" ", s).lower()
    s = "".join(ch for ch in s if ch.isalnum() or ch in _KEEP_PUNCT)
    return _SPACE.sub(" ", s).strip()


def tokenize(text: str) -> list[str]:
    """Lower-cased word tokens; whitespace and punctuation are separators."""
    return _TOKEN.findall(text.lower())
