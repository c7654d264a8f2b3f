"""Small shared plumbing: seed fan-out, atomic writes, artifact hashing."""

import hashlib
import json
import os
import tempfile


def stage_seed(root_seed: int, stage: str) -> int:
    """Deterministic per-stage seed derived from one root seed, so stages are
    independently reproducible across runs and platforms."""
    digest = hashlib.sha256(f"{root_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def atomic_write_text(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_json(path, doc, indent=None):
    atomic_write_text(path, json.dumps(doc, indent=indent, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
