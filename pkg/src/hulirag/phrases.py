"""Query decomposition into open-vocabulary phrases, plus overlap merging.

The chunker is deliberately rule-based and deterministic: a query is split
into noun chunks on stop words, with a short list of connector words ("in",
"of", "with") allowed to glue modifiers onto the chunk they follow, so that
"man in blue" stays one phrase while "two cones near the leftmost sign"
splits into two. Numerals and spatial modifiers are ordinary content words
and survive into the lexical sets. Callers with a real parser can bypass the
chunker entirely through ``phrases_from_records``.

Phrases whose lexical sets overlap too strongly are merged: any pair with
Jaccard similarity above ``MERGE_THRESHOLD`` collapses into the phrase with
the larger lexical set (earlier phrase on ties), taking the union of both
sets, and this repeats until no pair is above the threshold. Repeated
mentions of the same surface are tracked with 1-based mention indices;
exact-surface duplicates with identical lexical sets always merge, which is
the extent of coreference handling here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

MERGE_THRESHOLD = 0.7

# Words that close a chunk. Everything not listed here (and not a connector)
# counts as a content word, which is what keeps numerals and spatial
# adjectives like "leftmost" inside the lexical sets.
STOP_WORDS = frozenset("""
    a an the this that these those there here
    i you he she it we they me him her us them my your his its our their
    who whom whose which what when where why how
    is are was were be been being am
    do does did done doing have has had having
    can could will would shall should may might must
    and or but nor so yet if then than as because while although
    not no none any some each every either neither both all
    to from at on by near under over above below behind beside between
    among across along around against off out up down into onto through
    during before after next about toward towards via per
""".split())

# Connectors keep a chunk open when they sit between content words:
# "man in blue" is one chunk, "shade of red" is one chunk.
CONNECTOR_WORDS = frozenset({"in", "of", "with"})

# Articles may appear after a connector without closing the chunk
# ("man in the blue shirt").
_ARTICLES = frozenset({"a", "an", "the"})

_TOKEN_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9'-]*")
_SEGMENT_SPLIT_RE = re.compile(r"[^\w\s'-]+")

_IRREGULAR_PLURALS = {
    "men": "man", "women": "woman", "children": "child", "people": "person",
    "feet": "foot", "teeth": "tooth", "mice": "mouse", "geese": "goose",
}


def lemmatize(word: str) -> str:
    """Strip plural suffixes; lowercase in, lowercase out."""
    if word in _IRREGULAR_PLURALS:
        return _IRREGULAR_PLURALS[word]
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith(("ches", "shes", "sses", "xes", "zes")):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


@dataclass
class Phrase:
    """One open-vocabulary phrase extracted from a query."""

    surface: str
    lexical_set: frozenset[str]
    order: int
    mention_index: int = 1

    def __post_init__(self):
        self.lexical_set = frozenset(self.lexical_set)
        if not self.lexical_set:
            raise ValueError(f"phrase {self.surface!r}: lexical set must be non-empty")
        if self.mention_index < 1:
            raise ValueError(f"phrase {self.surface!r}: mention_index must be >= 1")

    @property
    def key(self) -> str:
        """Stable key linking this phrase to grounded regions."""
        return f"{self.surface.lower()}#{self.mention_index}"

    def to_json(self) -> dict:
        return {
            "surface": self.surface,
            "lexical_set": sorted(self.lexical_set),
            "mention_index": self.mention_index,
        }


def lexical_set_of(surface: str) -> frozenset[str]:
    """Lemmatized content words of a surface string."""
    out = set()
    for token in _TOKEN_RE.findall(surface):
        low = token.lower()
        if low in STOP_WORDS or low in CONNECTOR_WORDS:
            continue
        out.add(lemmatize(low))
    return frozenset(out)


def _chunk_tokens(tokens: list[str]) -> list[list[str]]:
    chunks: list[list[str]] = []
    current: list[str] = []
    i = 0
    while i < len(tokens):
        token = tokens[i]
        low = token.lower()
        if low in CONNECTOR_WORDS and current:
            # Keep the chunk open only if a content word follows, optionally
            # skipping articles ("man in the blue shirt").
            j = i + 1
            glued = [token]
            while j < len(tokens) and tokens[j].lower() in _ARTICLES:
                glued.append(tokens[j])
                j += 1
            if j < len(tokens) and tokens[j].lower() not in STOP_WORDS \
                    and tokens[j].lower() not in CONNECTOR_WORDS:
                current.extend(glued)
                i = j
                continue
            chunks.append(current)
            current = []
        elif low in STOP_WORDS or low in CONNECTOR_WORDS:
            if current:
                chunks.append(current)
                current = []
        else:
            current.append(token)
        i += 1
    if current:
        chunks.append(current)
    return chunks


def extract_phrases(text: str) -> list[Phrase]:
    """Split a query into ordered phrases with lexical sets.

    A query with no content words yields an empty list. Repeated surfaces get
    increasing mention indices in order of appearance.
    """
    if not text:
        raise ValueError("query text must be non-empty")
    phrases: list[Phrase] = []
    mention_counts: dict[str, int] = {}
    order = 0
    for segment in _SEGMENT_SPLIT_RE.split(text):
        for chunk in _chunk_tokens(_TOKEN_RE.findall(segment)):
            surface = " ".join(chunk)
            lexical = lexical_set_of(surface)
            if not lexical:
                continue
            key = surface.lower()
            mention_counts[key] = mention_counts.get(key, 0) + 1
            phrases.append(Phrase(surface, lexical, order, mention_counts[key]))
            order += 1
    return phrases


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    """|a n b| / |a u b| for non-empty lexical sets."""
    if not a or not b:
        raise ValueError("jaccard is undefined for empty lexical sets")
    return len(a & b) / len(a | b)


def _reindex_mentions(items: list[Phrase]) -> None:
    counts: dict[str, int] = {}
    for phrase in items:
        key = phrase.surface.lower()
        counts[key] = counts.get(key, 0) + 1
        phrase.mention_index = counts[key]


def merge_phrases(phrases: list[Phrase], threshold: float = MERGE_THRESHOLD) -> list[Phrase]:
    """Collapse high-overlap phrases until no pair exceeds the threshold.

    The survivor of each merge is the phrase with the larger lexical set
    (the earlier one on ties); it absorbs the other's lexical set. Surviving
    phrases keep their original relative order, and mention indices are
    renumbered 1..m per surviving surface. Idempotent by construction.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("merge threshold must be in [0,1]")
    items = [replace(p) for p in sorted(phrases, key=lambda p: p.order)]
    merged = True
    while merged:
        merged = False
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                if jaccard(items[i].lexical_set, items[j].lexical_set) <= threshold:
                    continue
                earlier, later = items[i], items[j]
                if len(later.lexical_set) > len(earlier.lexical_set):
                    survivor, absorbed = later, earlier
                else:
                    survivor, absorbed = earlier, later
                survivor.lexical_set = frozenset(survivor.lexical_set | absorbed.lexical_set)
                items.remove(absorbed)
                merged = True
                break
            if merged:
                break
    items.sort(key=lambda p: p.order)
    _reindex_mentions(items)
    return items


def phrases_from_records(records: list[dict]) -> list[Phrase]:
    """Build phrases from externally parsed records, bypassing the chunker.

    Each record needs a ``surface``; ``lexical_set`` is computed from the
    surface when absent, and records whose computed set comes out empty are
    skipped. Mention indices are assigned in order when absent.
    """
    phrases: list[Phrase] = []
    mention_counts: dict[str, int] = {}
    order = 0
    for rec in records:
        surface = str(rec["surface"])
        if "lexical_set" in rec:
            lexical = frozenset(str(w).lower() for w in rec["lexical_set"])
            if not lexical:
                raise ValueError(f"phrase {surface!r}: explicit lexical_set is empty")
        else:
            lexical = lexical_set_of(surface)
            if not lexical:
                continue
        if "mention_index" in rec:
            mention = int(rec["mention_index"])
        else:
            key = surface.lower()
            mention_counts[key] = mention_counts.get(key, 0) + 1
            mention = mention_counts[key]
        phrases.append(Phrase(surface, lexical, order, mention))
        order += 1
    return phrases
