"""Persistent run store and registry working copy.

Layout under the store root:

    registry/                 active registry (copied from the source dir)
    registry_meta.json        {"version": n}
    registry_versions/v<n>/   snapshots taken before each promotion
    runs/<run_id>/record.json
    runs/<run_id>/stage{1..4}.json, stage2.json.orig on expert edits
    runs/<run_id>/result.json, trace.json
    runs/<run_id>/blobs/<digest>.json

Writes are atomic (write-to-temp, rename) and per-run mutations are
serialized with in-process locks; completed artifacts are only replaced
through explicit stage re-execution or an expert edit decision.
"""

from __future__ import annotations

import shutil
import threading
from pathlib import Path
from typing import Any, Iterator, Mapping

from .errors import UnknownRunError
from .jsonutil import read_json, write_json_atomic

STAGE_FILES = {
    "querymind": "stage1.json",
    "workflowscout": "stage2.json",
    "solutionweaver": "stage3.json",
    "curator": "stage4.json",
}


class RunBlobStore:
    """Content-addressed JSON blobs inside one run directory."""

    def __init__(self, directory: Path):
        self.directory = directory

    def put(self, digest: str, document: Mapping[str, Any]) -> None:
        path = self.directory / f"{digest}.json"
        if not path.exists():
            write_json_atomic(path, document)

    def get(self, digest: str) -> Mapping[str, Any] | None:
        path = self.directory / f"{digest}.json"
        if not path.exists():
            return None
        return read_json(path)


class RunStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()

    def lock(self, run_id: str) -> threading.RLock:
        with self._locks_guard:
            if run_id not in self._locks:
                self._locks[run_id] = threading.RLock()
            return self._locks[run_id]

    # --- runs -----------------------------------------------------------

    def run_dir(self, run_id: str, create: bool = False) -> Path:
        path = self.runs_dir / run_id
        if create:
            (path / "blobs").mkdir(parents=True, exist_ok=True)
        return path

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "record.json").exists()

    def save_record(self, run_id: str, record: Mapping[str, Any]) -> None:
        self.run_dir(run_id, create=True)
        write_json_atomic(self.run_dir(run_id) / "record.json", record)

    def load_record(self, run_id: str) -> dict[str, Any]:
        path = self.run_dir(run_id) / "record.json"
        if not path.exists():
            raise UnknownRunError(run_id)
        return read_json(path)

    def list_run_ids(self) -> list[str]:
        if not self.runs_dir.exists():
            return []
        return sorted(
            (p.name for p in self.runs_dir.iterdir() if (p / "record.json").exists()),
            reverse=True,
        )

    # --- stage artifacts --------------------------------------------------

    def artifact_path(self, run_id: str, stage: str) -> Path:
        return self.run_dir(run_id) / STAGE_FILES[stage]

    def save_artifact(self, run_id: str, stage: str, document: Mapping[str, Any], keep_original: bool = False) -> None:
        path = self.artifact_path(run_id, stage)
        if keep_original and path.exists():
            original = path.with_suffix(path.suffix + ".orig")
            if not original.exists():
                shutil.copyfile(path, original)
        write_json_atomic(path, document)

    def load_artifact(self, run_id: str, stage: str) -> dict[str, Any] | None:
        path = self.artifact_path(run_id, stage)
        if not path.exists():
            return None
        return read_json(path)

    def save_artifact_export(self, run_id: str, stage: str, suffix: str, text: str) -> None:
        path = self.artifact_path(run_id, stage).with_suffix(f".{suffix}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")

    def load_artifact_export(self, run_id: str, stage: str, suffix: str) -> str | None:
        path = self.artifact_path(run_id, stage).with_suffix(f".{suffix}")
        if not path.exists():
            return None
        return path.read_text(encoding="utf-8")

    # --- results, traces, blobs ------------------------------------------

    def blobs(self, run_id: str) -> RunBlobStore:
        return RunBlobStore(self.run_dir(run_id, create=True) / "blobs")

    def save_result(self, run_id: str, result: Mapping[str, Any]) -> None:
        write_json_atomic(self.run_dir(run_id) / "result.json", result)

    def load_result(self, run_id: str) -> dict[str, Any] | None:
        path = self.run_dir(run_id) / "result.json"
        if not path.exists():
            return None
        return read_json(path)

    def save_trace(self, run_id: str, trace: Mapping[str, Any]) -> None:
        write_json_atomic(self.run_dir(run_id) / "trace.json", trace)

    def load_trace(self, run_id: str) -> dict[str, Any] | None:
        path = self.run_dir(run_id) / "trace.json"
        if not path.exists():
            return None
        return read_json(path)

    def traces(self) -> Iterator[dict[str, Any]]:
        for run_id in sorted(self.list_run_ids()):
            trace = self.load_trace(run_id)
            if trace is not None:
                yield trace

    # --- registry working copy --------------------------------------------

    @property
    def registry_dir(self) -> Path:
        return self.root / "registry"

    @property
    def registry_meta_path(self) -> Path:
        return self.root / "registry_meta.json"

    def registry_version(self) -> int:
        if not self.registry_meta_path.exists():
            return 0
        return int(read_json(self.registry_meta_path).get("version", 0))

    def init_registry(self, source_dir: str | Path) -> Path:
        """Copy the source registry into the store on first use."""
        if not self.registry_dir.exists():
            shutil.copytree(source_dir, self.registry_dir)
            write_json_atomic(self.registry_meta_path, {"version": 1})
        return self.registry_dir

    def snapshot_registry(self) -> Path:
        version = self.registry_version()
        snapshot = self.root / "registry_versions" / f"v{version}"
        if not snapshot.exists():
            shutil.copytree(self.registry_dir, snapshot)
        return snapshot

    def bump_registry_version(self) -> int:
        version = self.registry_version() + 1
        write_json_atomic(self.registry_meta_path, {"version": version})
        return version
