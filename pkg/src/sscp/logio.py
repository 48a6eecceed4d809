"""Run-directory logging: a deterministic JSONL stream plus a timing sidecar.

The main log must be byte-identical across reruns of the same seed, so
wall-clock measurements go to a separate file that no reproducibility
check reads.
"""

from __future__ import annotations

import json
import time
from pathlib import Path


class RunLogger:
    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._log = open(self.out_dir / "log.jsonl", "w", encoding="utf-8")
        self._timing = open(self.out_dir / "timing.jsonl", "w", encoding="utf-8")
        self._t0 = time.perf_counter()

    def write(self, record: dict) -> None:
        self._log.write(json.dumps(record, sort_keys=True) + "\n")

    def mark(self, step: int) -> None:
        self._timing.write(
            json.dumps({"step": step, "wall": time.perf_counter() - self._t0}) + "\n"
        )

    def close(self) -> None:
        self._log.close()
        self._timing.close()

    def __enter__(self) -> "RunLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
