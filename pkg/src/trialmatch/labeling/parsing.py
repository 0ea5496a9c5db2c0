"""Parsers for labeler responses.

Real services drift from the mandated output formats (single quotes,
unquoted strings, singular/plural key variants), so these parsers are
tolerant about everything except the label vocabulary itself: an
unrecognized label token is malformed output, never silently coerced.
"""

from __future__ import annotations

import json
import re
from typing import Iterable

from ..model import AttributeCategory, EligibilityLabel
from .judgments import MalformedLabelerOutput

# Accepted label tokens, case-insensitive. The prompt templates call the
# third value "no relevant information" while the label algebra calls it
# "not enough info"; both spellings map to the same label.
LABEL_TOKENS: dict[str, EligibilityLabel] = {
    "eligible": EligibilityLabel.ELIGIBLE,
    "excluded": EligibilityLabel.EXCLUDED,
    "no relevant information": EligibilityLabel.NOT_ENOUGH_INFO,
    "not enough info": EligibilityLabel.NOT_ENOUGH_INFO,
    "not enough information": EligibilityLabel.NOT_ENOUGH_INFO,
}

_LABEL_RE = re.compile(
    r"['\"]?label['\"]?\s*:\s*['\"]?\s*([^'\"}\n]*?)\s*['\"]?\s*(?:[,}]|$)",
    re.IGNORECASE,
)
_CRITERION_RE = re.compile(
    r"['\"]?criterion['\"]?\s*:\s*['\"]?\s*(.*?)\s*['\"]?\s*,\s*['\"]?(?:label|categor)",
    re.IGNORECASE | re.DOTALL,
)
_CATEGORY_LIST_RE = re.compile(
    r"['\"]?categor(?:ies|y)['\"]?\s*:\s*\[(.*?)\]", re.IGNORECASE | re.DOTALL
)

_CATEGORY_WORDS = (
    ("disease", AttributeCategory.DISEASE),
    ("demographic", AttributeCategory.DEMOGRAPHIC),
    ("treatment", AttributeCategory.TREATMENT),
)


def parse_label_token(token: str) -> EligibilityLabel:
    label = LABEL_TOKENS.get(token.strip().strip("'\".").lower())
    if label is None:
        raise MalformedLabelerOutput(f"unrecognized label token {token!r}")
    return label


def parse_fine_response(text: str) -> list[tuple[str, EligibilityLabel]]:
    """Extract (criterion text, label) pairs from a fine-label response.

    Lines without a Label key are ignored; a Label key with a token outside
    the accepted vocabulary raises MalformedLabelerOutput. The criterion
    text may be empty when the response omitted it.
    """
    pairs: list[tuple[str, EligibilityLabel]] = []
    for line in text.splitlines():
        if not re.search(r"['\"]?label['\"]?\s*:", line, re.IGNORECASE):
            continue
        m = _LABEL_RE.search(line)
        if not m:
            raise MalformedLabelerOutput(f"cannot parse label from line {line!r}")
        label = parse_label_token(m.group(1))
        cm = _CRITERION_RE.search(line)
        criterion = cm.group(1).strip() if cm else ""
        pairs.append((criterion, label))
    return pairs


def parse_coarse_response(text: str) -> EligibilityLabel:
    """Extract the binary whole-trial label; anything non-binary is malformed."""
    m = _LABEL_RE.search(text)
    if not m:
        raise MalformedLabelerOutput(f"no label found in coarse response {text!r}")
    label = parse_label_token(m.group(1))
    if label is EligibilityLabel.NOT_ENOUGH_INFO:
        raise MalformedLabelerOutput("coarse label must be eligible or excluded")
    return label


def map_category_names(names: Iterable[str]) -> frozenset[AttributeCategory]:
    """Map category strings onto attribute buckets by keyword.

    Tolerates wording variants like "prior treatment criteria"; strings
    matching no bucket are dropped.
    """
    out = set()
    for name in names:
        low = name.lower()
        for word, cat in _CATEGORY_WORDS:
            if word in low:
                out.add(cat)
    return frozenset(out)


def parse_categories_response(
    text: str,
) -> list[tuple[str, frozenset[AttributeCategory]]]:
    """Extract (criterion text, category set) pairs from a tagging response."""
    pairs: list[tuple[str, frozenset[AttributeCategory]]] = []
    for m in _CATEGORY_LIST_RE.finditer(text):
        raw_items = _split_listish(m.group(1))
        start = text.rfind("{", 0, m.start())
        # The chunk must reach into the category key itself: the criterion
        # pattern uses that key as its right-hand anchor.
        chunk = text[start if start >= 0 else 0 : m.end()]
        cm = _CRITERION_RE.search(chunk)
        criterion = cm.group(1).strip() if cm else ""
        pairs.append((criterion, map_category_names(raw_items)))
    return pairs


_EXTRACTION_KEYS = {
    "disease characteristics": "disease",
    "demographic characteristics": "demographics",
    "treatment": "treatment",
    "suggested diagnosis": "diagnosis",
}


def parse_patient_extraction(text: str) -> dict[str, list[str]]:
    """Parse the patient attribute extraction response.

    Returns a dict with keys disease, demographics, treatment, diagnosis.
    Accepts strict JSON or the looser brace format with unquoted list
    items. A response containing none of the expected category keys is
    malformed.
    """
    out: dict[str, list[str]] = {
        "disease": [],
        "demographics": [],
        "treatment": [],
        "diagnosis": [],
    }
    parsed = _try_json_object(text)
    if parsed is not None:
        found = False
        for key, value in parsed.items():
            slot = _EXTRACTION_KEYS.get(key.strip().lower())
            if slot is None:
                continue
            found = True
            if isinstance(value, str):
                value = [value]
            out[slot] = [str(v).strip() for v in value if str(v).strip()]
        if not found:
            raise MalformedLabelerOutput("no attribute categories in response")
        return out

    found = False
    for key, slot in _EXTRACTION_KEYS.items():
        m = re.search(
            rf"['\"]?{re.escape(key)}['\"]?\s*:\s*\[(.*?)\]",
            text,
            re.IGNORECASE | re.DOTALL,
        )
        if m:
            found = True
            out[slot] = _split_listish(m.group(1))
    if not found:
        raise MalformedLabelerOutput("no attribute categories in response")
    return out


def _try_json_object(text: str) -> dict | None:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def _split_listish(inner: str) -> list[str]:
    """Split a bracketed list body on commas outside parentheses/quotes."""
    items: list[str] = []
    buf: list[str] = []
    depth = 0
    for ch in inner:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth = max(0, depth - 1)
        if ch == "," and depth == 0:
            items.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    items.append("".join(buf))
    return [s for s in (i.strip().strip("'\"").strip() for i in items) if s]
