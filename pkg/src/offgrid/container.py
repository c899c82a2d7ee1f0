"""`.usrf` container: a JSON manifest followed by raw little-endian arrays.

Layout::

    b"USRF\\n"  | uint64 LE manifest length | manifest (UTF-8 JSON) | arrays

Every array entry in the manifest records its name, dtype (``<f4`` by
default, ``<f8`` for arrays that are float64 in memory), shape, byte offset
relative to the start of the array block, and byte count. Geometry, transmit
scheme, TGC curve and waveform samples live in the manifest; JSON floats are
written with their shortest round-trip representation, so reading back is
bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import ModelParams, RFDataCube, ScattererField, TransducerGeometry, TransmitScheme, ValidationError

MAGIC = b"USRF\n"
VERSION = 1
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _dtype_tag(a: np.ndarray) -> str:
    return "<f8" if a.dtype == np.float64 else "<f4"


def write_usrf(path, arrays: dict, meta: dict | None = None, kind: str = "rf") -> None:
    """Write named float arrays plus metadata."""
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if not np.issubdtype(a.dtype, np.floating):
            a = a.astype(np.float64)
        tag = _dtype_tag(a)
        raw = np.ascontiguousarray(a, dtype=_DTYPES[tag]).tobytes()
        entries.append({"name": name, "dtype": tag, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format": "usrf", "version": VERSION, "endianness": "little", "kind": kind,
                "arrays": entries, "meta": meta or {}}
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def read_usrf(path) -> tuple[dict, dict]:
    """Return ``(arrays, manifest)``.

    Raises:
        ValidationError: not a container or truncated.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 8:
        raise ValidationError(f"{path}: not a usrf container")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        manifest = json.loads(data[start: start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValidationError(f"{path}: corrupt manifest") from err
    if manifest.get("endianness") != "little":
        raise ValidationError(f"{path}: unsupported endianness")
    base = start + n
    arrays = {}
    for e in manifest["arrays"]:
        dt = _DTYPES.get(e["dtype"])
        if dt is None:
            raise ValidationError(f"{path}: unsupported dtype {e['dtype']}")
        lo = base + e["offset"]
        if lo + e["nbytes"] > len(data):
            raise ValidationError(f"{path}: truncated array {e['name']}")
        a = np.frombuffer(data, dtype=dt, count=e["nbytes"] // dt.itemsize, offset=lo)
        arrays[e["name"]] = a.reshape(e["shape"]).astype(dt.newbyteorder("="))
    return arrays, manifest


def geometry_to_dict(g: TransducerGeometry) -> dict:
    return {"element_positions": g.element_positions.tolist(), "element_width": g.element_width,
            "center_frequency": g.center_frequency, "sampling_frequency": g.sampling_frequency}


def geometry_from_dict(d: dict) -> TransducerGeometry:
    return TransducerGeometry(np.array(d["element_positions"], dtype=float), d["element_width"],
                              d["center_frequency"], d["sampling_frequency"])


def scheme_to_dict(s: TransmitScheme) -> dict:
    return {"delays": s.delays.tolist(), "apodization": s.apodization.tolist(),
            "waveforms": [w.tolist() for w in s.waveforms], "waveform_fs": s.waveform_fs,
            "initial_time": s.initial_time, "n_fast_time": s.n_fast_time}


def scheme_from_dict(d: dict) -> TransmitScheme:
    return TransmitScheme(np.array(d["delays"], dtype=float), np.array(d["apodization"], dtype=float),
                          tuple(np.array(w, dtype=float) for w in d["waveforms"]), d["waveform_fs"],
                          d["initial_time"], d["n_fast_time"])


def save_rf(path, rf: RFDataCube, geometry: TransducerGeometry, scheme: TransmitScheme,
            truth: ScattererField | None = None, meta: dict | None = None) -> None:
    """RF cube plus acquisition; `truth` is stored when known (simulations)."""
    arrays = {"samples": rf.samples}
    if truth is not None:
        arrays["truth_positions"] = np.asarray(truth.positions, dtype=np.float64)
        arrays["truth_amplitudes"] = np.asarray(truth.amplitudes, dtype=np.float64)
    m = {"geometry": geometry_to_dict(geometry), "scheme": scheme_to_dict(scheme),
         "tgc_curve": np.asarray(rf.tgc_curve, dtype=float).tolist()}
    m.update(meta or {})
    write_usrf(path, arrays, m, kind="rf")


def load_rf(path):
    """Return ``(rf, geometry, scheme, truth_or_None, meta)``."""
    arrays, manifest = read_usrf(path)
    if manifest.get("kind") != "rf":
        raise ValidationError(f"{path}: expected an rf container")
    meta = manifest["meta"]
    geometry = geometry_from_dict(meta["geometry"])
    scheme = scheme_from_dict(meta["scheme"])
    rf = RFDataCube(arrays["samples"], np.array(meta["tgc_curve"], dtype=float))
    truth = None
    if "truth_positions" in arrays:
        truth = ScattererField(arrays["truth_positions"], arrays["truth_amplitudes"])
    return rf, geometry, scheme, truth, meta


_SCALAR_PARAMS = ("speed_of_sound", "attenuation_coeff", "element_width", "initial_time_offset",
                  "lowpass_intercept", "lowpass_slope", "scatterer_radius")


def save_model(path, field: ScattererField, params: ModelParams, meta: dict | None = None) -> None:
    """Constrained scatterers and physics parameters."""
    arrays = {"positions": np.asarray(field.positions, dtype=np.float64),
              "amplitudes": np.asarray(field.amplitudes, dtype=np.float64),
              "element_gain": np.asarray(params.element_gain, dtype=np.float64)}
    m = {"params": {k: getattr(params, k) for k in _SCALAR_PARAMS}}
    m.update(meta or {})
    write_usrf(path, arrays, m, kind="model")


def load_model(path):
    """Return ``(field, params, meta)``."""
    arrays, manifest = read_usrf(path)
    if manifest.get("kind") != "model":
        raise ValidationError(f"{path}: expected a model container")
    meta = manifest["meta"]
    field = ScattererField(arrays["positions"], arrays["amplitudes"])
    params = ModelParams(element_gain=arrays["element_gain"], **meta["params"])
    return field, params, meta
