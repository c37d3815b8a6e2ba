"""Checkpoint files: a JSON manifest beside a raw little-endian float64 blob.

``model.json`` maps each parameter name to its dims and byte offset inside
``model.bin``; the blob is the parameters concatenated in manifest order.
"""

import json
from pathlib import Path

import numpy as np

from pathfl.errors import FormatError

FORMAT = "pathfl-checkpoint"
_DTYPE = np.dtype("<f8")


def save_checkpoint(path, params, meta=None):
    """Write ``params`` (name -> array) to ``path`` (manifest) and ``path.with_suffix('.bin')``."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    entries = {}
    offset = 0
    chunks = []
    for name, arr in params.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        entries[name] = {"dims": list(a.shape), "offset": offset}
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = {"format": FORMAT, "v": 1, "blob": blob_path.name, "nbytes": offset,
                "params": entries, "meta": meta or {}}
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path):
    """Return ``(params, meta)``; arrays are bit-exact copies of what was saved."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})") from exc
    if manifest.get("format") != FORMAT:
        raise FormatError(f"{path}: not a {FORMAT} manifest")
    blob = (path.parent / manifest["blob"]).read_bytes()
    if len(blob) != manifest["nbytes"]:
        raise FormatError(f"{path}: blob has {len(blob)} bytes, manifest says {manifest['nbytes']}")
    params = {}
    for name, entry in manifest["params"].items():
        dims = tuple(entry["dims"])
        count = int(np.prod(dims, dtype=np.int64))
        start = entry["offset"]
        if start + count * _DTYPE.itemsize > len(blob):
            raise FormatError(f"{path}: parameter {name!r} runs past the end of the blob")
        params[name] = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=start) \
            .reshape(dims).astype(np.float64)
    return params, manifest.get("meta", {})
