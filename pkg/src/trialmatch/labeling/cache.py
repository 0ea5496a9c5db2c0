"""Append-only JSONL cache of eligibility labels.

Keys are (patient id, trial id, criterion index or COARSE, template hash);
the template hash makes edited prompts miss the cache instead of replaying
stale labels. Lookups are exact-key; a warm cache replays a pipeline with
zero labeler calls.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

COARSE_INDEX = "COARSE"


class CacheIoError(Exception):
    pass


@dataclass(frozen=True)
class CacheKey:
    patient_id: str
    trial_id: str
    criterion_index: str  # stringified integer, or COARSE_INDEX
    template_hash: str

    @classmethod
    def fine(cls, patient_id: str, trial_id: str, index: int, template_hash: str) -> "CacheKey":
        return cls(patient_id, trial_id, str(index), template_hash)

    @classmethod
    def coarse(cls, patient_id: str, trial_id: str, template_hash: str) -> "CacheKey":
        return cls(patient_id, trial_id, COARSE_INDEX, template_hash)


class CachedLabel(NamedTuple):
    label: str
    raw_response: str
    from_cache: bool


class LabelCache:
    """Thread-safe label cache backed by an append-only JSONL file.

    Pass path=None for a purely in-memory cache. A corrupt final line
    (a crash mid-append) is truncated away with a warning; a corrupt line
    anywhere else raises CacheIoError, since silent loss of interior
    entries would mean the file was edited or mixed up.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[CacheKey, CachedLabel] = {}
        self._master = threading.Lock()
        self._key_locks: dict[CacheKey, threading.Lock] = {}
        self.produced = 0
        self.hits = 0
        if self.path is not None and self.path.exists():
            self._load()

    def __len__(self) -> int:
        return len(self._entries)

    def _load(self) -> None:
        assert self.path is not None
        raw = self.path.read_bytes()
        offset = 0
        lines = raw.split(b"\n")
        for i, line in enumerate(lines):
            if not line.strip():
                offset += len(line) + 1
                continue
            try:
                row = json.loads(line.decode("utf-8"))
                key = CacheKey(
                    row["patient_id"],
                    row["trial_id"],
                    row["criterion_index"],
                    row["template_hash"],
                )
                self._entries[key] = CachedLabel(row["label"], row["raw_response"], True)
            except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
                tail = all(not l.strip() for l in lines[i + 1 :])
                if tail:
                    import warnings

                    warnings.warn(
                        f"truncating corrupt trailing cache line in {self.path}",
                        stacklevel=2,
                    )
                    with open(self.path, "r+b") as fh:
                        fh.truncate(offset)
                    return
                raise CacheIoError(
                    f"corrupt cache line {i + 1} in {self.path}: {exc}"
                ) from exc
            offset += len(line) + 1

    def get(self, key: CacheKey) -> CachedLabel | None:
        with self._master:
            return self._entries.get(key)

    def put(self, key: CacheKey, label: str, raw_response: str) -> None:
        entry = CachedLabel(label, raw_response, False)
        with self._master:
            self._entries[key] = entry
            self._append(key, entry)

    def _append(self, key: CacheKey, entry: CachedLabel) -> None:
        if self.path is None:
            return
        row = {
            "patient_id": key.patient_id,
            "trial_id": key.trial_id,
            "criterion_index": key.criterion_index,
            "template_hash": key.template_hash,
            "label": entry.label,
            "raw_response": entry.raw_response,
            "timestamp": time.time(),
        }
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise CacheIoError(f"cannot append to cache {self.path}: {exc}") from exc

    def get_or_label(
        self, key: CacheKey, producer: Callable[[], tuple[str, str]]
    ) -> CachedLabel:
        """Return the cached label, producing and storing it on a miss.

        Per-key locking gives the at-most-once guarantee: two threads
        asking for the same missing key trigger a single producer call.
        """
        with self._master:
            hit = self._entries.get(key)
            if hit is not None:
                self.hits += 1
                return hit
            lock = self._key_locks.setdefault(key, threading.Lock())
        with lock:
            with self._master:
                hit = self._entries.get(key)
                if hit is not None:
                    self.hits += 1
                    return hit
            label, raw = producer()
            entry = CachedLabel(label, raw, False)
            with self._master:
                self._entries[key] = entry
                self._append(key, entry)
                self.produced += 1
                self._key_locks.pop(key, None)
            return entry
