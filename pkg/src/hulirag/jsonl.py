"""Line-delimited JSON helpers with deterministic serialization.

All stage artifacts are written through ``dumps_stable`` so that identical
in-memory records always produce identical bytes (sorted keys, no whitespace
padding, repr-exact floats).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .errors import CorpusFormatError


def dumps_stable(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; line numbers are 1-based."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc}", str(path), lineno) from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError("record is not an object", str(path), lineno)
            yield lineno, obj


def write_jsonl(path: str | Path, records: Iterable[Any], to_json: Callable[[Any], dict] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            doc = to_json(rec) if to_json is not None else rec
            fh.write(dumps_stable(doc))
            fh.write("\n")


def read_json(path: str | Path) -> Any:
    with Path(path).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(dumps_stable(obj))
        fh.write("\n")
