"""Content-addressed on-disk response store.

Layout is ``<root>/<first two hex chars>/<digest>.json``. Entries are written
atomically (temp file + rename), so concurrent readers never observe a partial
file. Nothing is ever evicted automatically.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any


class ResponseCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._locks: defaultdict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks[key]

    def get(self, key: str) -> dict[str, Any] | None:
        path = self.path_for(key)
        try:
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
        except FileNotFoundError:
            with self._guard:
                self.misses += 1
            return None
        except json.JSONDecodeError:
            # corrupt entry; treat as absent so it is rewritten
            with self._guard:
                self.misses += 1
            return None
        with self._guard:
            self.hits += 1
        return entry

    def put(self, key: str, entry: dict[str, Any]) -> None:
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def __contains__(self, key: str) -> bool:
        return self.path_for(key).exists()

    def __len__(self) -> int:
        if not self.root.exists():
            return 0
        return sum(1 for _ in self.root.glob("??/*.json"))

    def clear(self) -> int:
        n = 0
        for p in self.root.glob("??/*.json"):
            p.unlink()
            n += 1
        return n
