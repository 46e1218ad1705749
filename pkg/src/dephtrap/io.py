"""Output files: CSV with a JSON metadata header, manifests with hashes."""
from __future__ import annotations

import hashlib
import json
import subprocess
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__


@lru_cache(maxsize=1)
def git_describe() -> str:
    """``git describe`` of the source tree, or the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def header_block(config_data: dict, extra: dict | None = None) -> dict:
    meta = {"config": config_data, "code_version": git_describe(), "package_version": __version__}
    if extra:
        meta.update(extra)
    return meta


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class OutputDir:
    """Collects written files and their hashes."""

    def __init__(self, root, header: dict):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.header = header
        self.files: dict[str, str] = {}

    def _register(self, path: Path):
        rel = str(path.relative_to(self.root))
        self.files[rel] = hashlib.sha256(path.read_bytes()).hexdigest()

    def csv(self, name: str, columns: dict, extra: dict | None = None) -> Path:
        """Write equal-length columns; the first line is ``# {json}``."""
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.header)
        if extra:
            meta["info"] = extra
        keys = list(columns)
        data = [np.asarray(columns[k]).ravel() for k in keys]
        n = len(data[0]) if data else 0
        if any(len(d) != n for d in data):
            raise ValueError("columns differ in length")
        lines = ["# " + json.dumps(meta, sort_keys=True, default=_json_default), ",".join(keys)]
        for i in range(n):
            lines.append(",".join(_fmt(d[i]) for d in data))
        path.write_text("\n".join(lines) + "\n")
        self._register(path)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        body = {"header": self.header, "data": payload}
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")
        self._register(path)
        return path

    def add_existing(self, path):
        self._register(Path(path))

    def write_manifest(self) -> Path:
        path = self.root / "manifest.json"
        body = {"header": {"code_version": self.header.get("code_version")},
                "files": dict(sorted(self.files.items()))}
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def manifest_digest(path) -> str:
    """Single hash over a manifest's file table."""
    files = json.loads(Path(path).read_text())["files"]
    return hashlib.sha256(json.dumps(files, sort_keys=True).encode()).hexdigest()
