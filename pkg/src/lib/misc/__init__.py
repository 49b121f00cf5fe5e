"""## Miscellaneous helpers"""

import os, shortuuid
from contextlib import contextmanager
from typing import IO, Iterator


def ensuredir(dir):
    """Ensure path exists."""
    if not os.path.exists(dir):
        os.makedirs(dir)


@contextmanager
def atomic_write(path: str, mode: str = "w") -> Iterator[IO]:
    """Open a temporary sibling of `path` for writing and move it over `path` once the block succeeds.

    Example:
    ```
    with atomic_write("runs/abc/metrics.csv") as f:
        df.to_csv(f, index=False)
    ```
    """
    directory = os.path.dirname(os.path.abspath(path))
    ensuredir(directory)
    tmp_path = os.path.join(directory, f".{os.path.basename(path)}.{shortuuid.uuid()[:8]}.tmp")
    try:
        with open(tmp_path, mode) as f:
            yield f
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)


def canonical(obj):
    """Turn nested dicts/lists/tuples into a form with sorted keys, for hashing."""
    if isinstance(obj, dict):
        return {str(k): canonical(obj[k]) for k in sorted(obj, key=str)}
    if isinstance(obj, (list, tuple)):
        return [canonical(x) for x in obj]
    return obj
