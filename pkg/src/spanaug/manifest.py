"""Run state and artifact manifest.

Every artifact a run writes is recorded as (phase, name, relative path,
sha256). The manifest is a pure function of (inputs, seed, config): entries
carry no timestamps or absolute paths, JSON is written with sorted keys, so
two runs of the same inputs produce byte-identical manifests anywhere on
disk. ``state.json`` additionally tracks completed phases for resumption; it
lives next to the manifest but is not itself a manifest entry.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def dump_jsonl(records: list[dict]) -> str:
    return "".join(
        json.dumps(r, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
        for r in records
    )


def load_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


@dataclass
class RunState:
    config_hash: str
    completed: list[str] = field(default_factory=list)
    entries: list[dict] = field(default_factory=list)

    STATE_FILE = "state.json"
    MANIFEST_FILE = "manifest.json"

    def is_done(self, phase: str) -> bool:
        return phase in self.completed

    def mark_done(self, phase: str, out_dir: Path) -> None:
        if phase not in self.completed:
            self.completed.append(phase)
        self.save(out_dir)

    def record(self, phase: str, name: str, path: Path, out_dir: Path) -> None:
        rel = path.relative_to(out_dir).as_posix()
        entry = {"phase": phase, "name": name, "path": rel, "sha256": sha256_file(path)}
        # Re-running a phase after resume must not duplicate entries.
        self.entries = [e for e in self.entries if not (e["phase"] == phase and e["name"] == name)]
        self.entries.append(entry)

    def save(self, out_dir: Path) -> None:
        payload = {
            "config_hash": self.config_hash,
            "completed": self.completed,
            "entries": self.entries,
        }
        (out_dir / self.STATE_FILE).write_text(dump_json(payload), encoding="utf-8")

    @classmethod
    def load(cls, out_dir: Path) -> "RunState | None":
        p = out_dir / cls.STATE_FILE
        if not p.is_file():
            return None
        raw = json.loads(p.read_text(encoding="utf-8"))
        return cls(
            config_hash=raw["config_hash"],
            completed=list(raw["completed"]),
            entries=list(raw["entries"]),
        )

    def write_manifest(self, out_dir: Path) -> Path:
        payload = {"config_hash": self.config_hash, "entries": self.entries}
        path = out_dir / self.MANIFEST_FILE
        path.write_text(dump_json(payload), encoding="utf-8")
        return path
