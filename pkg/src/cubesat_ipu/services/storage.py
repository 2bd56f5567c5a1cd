"""File operations confined to the payload storage root."""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass
from pathlib import Path, PurePosixPath


class StorageError(Exception):
    code = "StorageError"


class NotFound(StorageError, FileNotFoundError):
    code = "NotFound"


class OutsideRoot(StorageError, PermissionError):
    code = "OutsideRoot"


class Exists(StorageError, FileExistsError):
    code = "Exists"


STORAGE_ERRORS = {c.code: c for c in (NotFound, OutsideRoot, Exists)}


@dataclass(frozen=True)
class FileInfo:
    name: str
    size: int
    mtime: float
    is_dir: bool = False

    def to_json(self) -> dict:
        return {"name": self.name, "size": self.size, "mtime": self.mtime, "is_dir": self.is_dir}


class Storage:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._real_root = self.root.resolve()

    def resolve(self, rel: str) -> Path:
        """Normalise a client path and refuse anything escaping the root."""
        rel = str(rel).replace("\\", "/")
        pure = PurePosixPath(rel)
        if pure.is_absolute():
            raise OutsideRoot(rel)
        parts = []
        for part in pure.parts:
            if part in ("", "."):
                continue
            if part == "..":
                if not parts:
                    raise OutsideRoot(rel)
                parts.pop()
            else:
                parts.append(part)
        target = self._real_root.joinpath(*parts)
        # symlinks pointing out of the root are escapes too
        real = target.resolve()
        if real != self._real_root and self._real_root not in real.parents:
            raise OutsideRoot(rel)
        return target

    def relpath(self, path: Path) -> str:
        return path.relative_to(self._real_root).as_posix()

    def read(self, rel: str) -> bytes:
        p = self.resolve(rel)
        if not p.is_file():
            raise NotFound(rel)
        return p.read_bytes()

    def write(self, rel: str, data: bytes, overwrite: bool = True) -> FileInfo:
        p = self.resolve(rel)
        if p.exists() and not overwrite:
            raise Exists(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, p)
        return self._info(p)

    def exists(self, rel: str) -> bool:
        return self.resolve(rel).exists()

    def _info(self, p: Path) -> FileInfo:
        st = p.stat()
        return FileInfo(self.relpath(p), 0 if p.is_dir() else st.st_size, st.st_mtime, p.is_dir())

    def list(self, rel: str = ".") -> list[FileInfo]:
        p = self.resolve(rel)
        if not p.exists():
            raise NotFound(rel)
        if p.is_file():
            return [self._info(p)]
        return [self._info(c) for c in sorted(p.iterdir()) if not c.name.endswith(".tmp")]

    def move(self, src: str, dst: str, overwrite: bool = False) -> None:
        s, d = self.resolve(src), self.resolve(dst)
        if not s.exists():
            raise NotFound(src)
        if d.exists() and not overwrite:
            raise Exists(dst)
        d.parent.mkdir(parents=True, exist_ok=True)
        os.replace(s, d)

    def copy(self, src: str, dst: str, overwrite: bool = False) -> None:
        s, d = self.resolve(src), self.resolve(dst)
        if not s.exists():
            raise NotFound(src)
        if d.exists() and not overwrite:
            raise Exists(dst)
        d.parent.mkdir(parents=True, exist_ok=True)
        if s.is_dir():
            if d.exists():
                shutil.rmtree(d)
            shutil.copytree(s, d)
        else:
            shutil.copy2(s, d)

    def remove(self, rel: str) -> None:
        p = self.resolve(rel)
        if p == self._real_root:
            raise OutsideRoot("refusing to remove the storage root")
        if not p.exists():
            raise NotFound(rel)
        if p.is_dir():
            shutil.rmtree(p)
        else:
            p.unlink()

    def used_bytes(self) -> int:
        return sum(f.stat().st_size for f in self._real_root.rglob("*") if f.is_file())


def ftp_fs_ops(storage: Storage, cmd: str, *paths: str, overwrite: bool = False):
    """Dispatch ``list``/``move``/``copy``/``remove`` on ``storage``."""
    if cmd == "list":
        return storage.list(paths[0] if paths else ".")
    if cmd == "move":
        return storage.move(paths[0], paths[1], overwrite)
    if cmd == "copy":
        return storage.copy(paths[0], paths[1], overwrite)
    if cmd == "remove":
        return storage.remove(paths[0])
    raise ValueError(f"unknown fs command {cmd!r}")
