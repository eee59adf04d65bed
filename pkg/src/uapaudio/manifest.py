"""Run manifests: enough provenance to reproduce any CLI invocation."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field


def file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    input_checksums: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def add_input(self, path) -> None:
        self.input_checksums[str(path)] = file_checksum(path)

    def add_output(self, path) -> None:
        self.outputs.append(str(path))

    def write(self, path) -> None:
        payload = {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "input_checksums": self.input_checksums,
            "outputs": self.outputs,
            "wall_clock_seconds": self.wall_clock_seconds,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


class Stopwatch:
    def __enter__(self):
        self._start = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.monotonic() - self._start
        return False
