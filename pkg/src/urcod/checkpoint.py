"""Versioned checkpoint container shared by the edge generator, pseudo-map model and refiner.

A checkpoint is a zip archive with a fixed timestamp on every entry:

* ``meta.json`` -- format version, configs, and the ordered list of array names
* ``arrays/<name>.npy`` -- one ``.npy`` file per named parameter array

Entries are written in sorted order so that save -> load -> save is byte-stable.
"""

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

FORMAT = "urcod-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(path, arrays, meta=None):
    """Write ``arrays`` (name -> ndarray) plus JSON-serializable ``meta``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(arrays)
    header = {"format": FORMAT, "version": VERSION, "arrays": names, "meta": meta or {}}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_entry("meta.json"), json.dumps(header, sort_keys=True, indent=1))
        for name in names:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(_entry(f"arrays/{name}.npy"), buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("meta.json"))
            if header.get("format") != FORMAT:
                raise CheckpointError(f"{path}: not a urcod checkpoint")
            if header.get("version") != VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
            arrays = {}
            for name in header["arrays"]:
                arrays[name] = np.lib.format.read_array(io.BytesIO(zf.read(f"arrays/{name}.npy")), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return arrays, header["meta"]


def module_arrays(prefix, module):
    """Flatten a torch module's state into ``{prefix.name: ndarray}``."""
    return {f"{prefix}.{k}": v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_arrays(prefix, module, arrays):
    state = {}
    for k, v in module.state_dict().items():
        key = f"{prefix}.{k}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {key}")
        state[k] = torch.as_tensor(arrays[key], dtype=v.dtype)
    module.load_state_dict(state)
    return module
