"""Run-directory plumbing: atomic file writes and run manifests."""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path


@contextmanager
def atomic_path(final: str | Path):
    """Yield a temp path that replaces `final` only after a clean write."""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = final.with_name(final.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, final)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_json(path: str | Path, payload: dict) -> None:
    with atomic_path(path) as tmp:
        tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_jsonl(path: str | Path, rows) -> None:
    with atomic_path(path) as tmp:
        with tmp.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Manifest:
    """Records what a run did; embeds the resolved config so any artifact is
    reproducible from the manifest alone. Timestamps live only here, never
    in metric files."""

    def __init__(self, subcommand: str, config_dict: dict, config_hash: str,
                 seed: int, code_version: str, argv: list[str]):
        self.payload = {
            "subcommand": subcommand,
            "config": config_dict,
            "config_hash": config_hash,
            "seed": seed,
            "code_version": code_version,
            "argv": argv,
            "started_at": utc_now(),
            "finished_at": None,
            "outputs": [],
        }

    def add_output(self, path: str | Path) -> None:
        self.payload["outputs"].append(str(path))

    def finish(self, out_dir: str | Path) -> Path:
        self.payload["finished_at"] = utc_now()
        name = f"manifest_{self.payload['subcommand'].replace('-', '_')}.json"
        path = Path(out_dir) / name
        write_json(path, self.payload)
        return path
