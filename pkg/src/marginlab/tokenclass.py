"""Heuristic token-class hierarchy for audit stratification.

Six rules, applied in order, first match wins:

1. structural: every character is Unicode punctuation (P*) or symbol
   (S*), or the token is whitespace-only;
2. numeric: matches ``^[0-9][0-9,./:%+-]*$``;
3. function word: pure alphabetic and its lowercased form is in the
   pinned 101-word list (articles, prepositions, pronouns, auxiliaries,
   conjunctions) shipped with the package;
4. entity-like: Capitalized-then-lowercase or all-caps of length >= 2;
5. content word: any remaining pure alphabetic token;
6. fragment: everything else (including the empty string).

Classification is a total function on strings.  Tokens may carry leading
or trailing whitespace (as emitted by sub-word tokenizers); rules 1-5
test the whitespace-stripped core so that e.g. " the" still counts as a
function word, while a whitespace-only token is structural.

This is a coarse taxonomy, not a linguistic gold standard; its job is to
separate punctuation/formatting cleanup from content-bearing changes.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .audit import churn_report
from .errors import DataError
from .margins import MarginRecord

__all__ = [
    "TokenClass",
    "classify_token",
    "function_words",
    "ClassAuditRow",
    "ClassAudit",
    "class_audit",
]

_NUMERIC_RE = re.compile(r"^[0-9][0-9,./:%+-]*$")
_CAPITALIZED_RE = re.compile(r"^[A-Z][A-Za-z]+$")
_ALLCAPS_RE = re.compile(r"^[A-Z]{2,}$")
_ALPHA_RE = re.compile(r"^[A-Za-z]+$")


class TokenClass(Enum):
    STRUCTURAL = "structural"
    NUMERIC = "numeric"
    FUNCTION_WORD = "function_word"
    ENTITY_LIKE = "entity_like"
    CONTENT_WORD = "content_word"
    FRAGMENT = "fragment"


_FUNCTION_WORDS: frozenset[str] | None = None


def function_words() -> frozenset[str]:
    """The pinned 101-word function-word list (lowercase)."""
    global _FUNCTION_WORDS
    if _FUNCTION_WORDS is None:
        text = (
            resources.files("marginlab").joinpath("data/function_words.txt").read_text()
        )
        words = frozenset(w for w in text.split() if w)
        _FUNCTION_WORDS = words
    return _FUNCTION_WORDS


def _all_punct_or_symbol(text: str) -> bool:
    return all(unicodedata.category(ch)[0] in ("P", "S") for ch in text)


def classify_token(token_text: str) -> TokenClass:
    """Classify one decoded token; total on all strings."""
    if token_text == "":
        return TokenClass.FRAGMENT
    core = token_text.strip()
    if core == "" or _all_punct_or_symbol(core):
        return TokenClass.STRUCTURAL
    if _NUMERIC_RE.match(core):
        return TokenClass.NUMERIC
    if _ALPHA_RE.match(core):
        if core.lower() in function_words():
            return TokenClass.FUNCTION_WORD
        if _CAPITALIZED_RE.match(core) or _ALLCAPS_RE.match(core):
            return TokenClass.ENTITY_LIKE
        return TokenClass.CONTENT_WORD
    return TokenClass.FRAGMENT


@dataclass(frozen=True)
class ClassAuditRow:
    token_class: TokenClass
    count: int
    w2r: int
    r2w: int
    net_corrected: int
    share_of_net: float | None  # None when total net corrected is 0


@dataclass(frozen=True)
class ClassAudit:
    rows: tuple[ClassAuditRow, ...]
    total_net_corrected: int


def class_audit(
    baseline: list[MarginRecord],
    polished: list[MarginRecord],
    token_texts: list[str],
) -> ClassAudit:
    """Net corrections per token class, with shares of the total.

    ``token_texts[i]`` is the decoded text of position i's target token.
    The fragment class gets its own row like every other class.
    """
    if len(token_texts) != len(baseline):
        raise DataError(
            f"token text count {len(token_texts)} does not match "
            f"{len(baseline)} audit positions"
        )
    overall = churn_report(baseline, polished)
    per_class: dict[TokenClass, list[int]] = {c: [0, 0, 0] for c in TokenClass}
    for b, p, text in zip(baseline, polished, token_texts):
        stats = per_class[classify_token(text)]
        stats[0] += 1
        if (not b.correct) and p.correct:
            stats[1] += 1
        elif b.correct and not p.correct:
            stats[2] += 1
    rows = []
    for cls in TokenClass:
        count, w2r, r2w = per_class[cls]
        net = w2r - r2w
        share = net / overall.net_corrected if overall.net_corrected != 0 else None
        rows.append(
            ClassAuditRow(
                token_class=cls,
                count=count,
                w2r=w2r,
                r2w=r2w,
                net_corrected=net,
                share_of_net=share,
            )
        )
    return ClassAudit(rows=tuple(rows), total_net_corrected=overall.net_corrected)
