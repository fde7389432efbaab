import os
from pathlib import Path

from mgtc.errors import MGTCError


class IOFailure(MGTCError, OSError):
    exit_code = 5
    category = "io"


def atomic_write(path, payload):
    """Write bytes or text via a temp file in the same directory, then rename."""
    if isinstance(payload, str):
        payload = payload.encode()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc.strerror or exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink()
