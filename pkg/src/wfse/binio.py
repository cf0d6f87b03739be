"""Shared helpers for the toolkit's small checksummed binary files."""

from __future__ import annotations

import hashlib

from .errors import ChecksumMismatch, IoFailure, VersionMismatch


def digest64(payload: bytes) -> int:
    """64-bit payload digest used by all binary artifacts."""
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def read_file(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_file(path, blob: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def check_magic(blob: bytes, magic: bytes, path) -> None:
    if len(blob) < len(magic) or blob[: len(magic)] != magic:
        raise VersionMismatch(f"{path}: bad magic, expected {magic!r}")


def split_checked(blob: bytes, body_start: int, path) -> bytes:
    """Split a blob into payload + trailing 64-bit digest and verify it."""
    if len(blob) < body_start + 8:
        raise ChecksumMismatch(f"{path}: file truncated")
    payload = blob[body_start:-8]
    stored = int.from_bytes(blob[-8:], "little")
    if digest64(payload) != stored:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")
    return payload
