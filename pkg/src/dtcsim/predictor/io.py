"""Weight files: JSON header followed by flat little-endian float64 data.

Layout: an 8-byte little-endian unsigned header length, the UTF-8 JSON
header, then every array in header order as ``<f8`` values.
"""
import hashlib
import json
import struct

import numpy as np

from ..exceptions import ConfigError
from .pl_cnn import PathLossRegressor
from .recon import CSIReconstructor

_MODELS = {"PathLossRegressor": PathLossRegressor, "CSIReconstructor": CSIReconstructor}

# fitted attributes persisted alongside the weights
_STATE = {
    "PathLossRegressor": ("x_mean_", "x_scale_"),
    "CSIReconstructor": ("wek_mean_", "wek_scale_", "interp_"),
}
_SCALARS = {
    "PathLossRegressor": ("y_mean_", "y_scale_"),
    "CSIReconstructor": ("n_antennas_",),
}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def config_hash(params):
    blob = json.dumps({k: _jsonable(v) for k, v in params.items()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_model(path, model, metadata=None):
    """Write ``model`` to ``path``; ``metadata`` (JSON-able) is kept in the header."""
    name = type(model).__name__
    params = {k: _jsonable(v) for k, v in model.get_params().items()}
    arrays = [("params_." + k, np.asarray(v, dtype=float)) for k, v in model.params_.items()]
    arrays += [(k, np.asarray(getattr(model, k), dtype=float)) for k in _STATE[name]]
    header = {
        "model": name,
        "params": params,
        "seed": params.get("random_state"),
        "config_hash": config_hash(params),
        "scalars": {k: _jsonable(getattr(model, k)) for k in _SCALARS[name]},
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays],
        "metadata": metadata or {},
    }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        (n,) = struct.unpack_from("<Q", blob, 0)
        header = json.loads(blob[8:8 + n].decode())
        cls = _MODELS[header["model"]]
    except (struct.error, ValueError, KeyError) as exc:
        raise ConfigError(f"{path} is not a weight file: {exc}") from exc
    params = header["params"]
    if "channels" in params and isinstance(params["channels"], list):
        params["channels"] = tuple(params["channels"])
    if params.get("pilot_indices") is not None:
        params["pilot_indices"] = np.asarray(params["pilot_indices"], dtype=int)
    model = cls(**params)
    offset = 8 + n
    model.params_ = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"]))
        a = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(entry["shape"]).astype(float)
        offset += 8 * size
        if entry["name"].startswith("params_."):
            model.params_[entry["name"][len("params_."):]] = a
        else:
            setattr(model, entry["name"], a)
    for k, v in header["scalars"].items():
        setattr(model, k, v)
    return model


def write_training_csv(path, curves):
    """Write ``{"label": [loss per epoch]}`` as rows (model, epoch, loss)."""
    with open(path, "w") as fh:
        fh.write("model,epoch,loss\n")
        for label, curve in curves.items():
            for epoch, loss in enumerate(curve, start=1):
                fh.write(f"{label},{epoch},{float(loss)!r}\n")
