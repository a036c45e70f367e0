"""Pipeline persistence as a versioned, self-describing binary container.

Layout: an 8-byte magic, a little-endian uint32 format version, a
little-endian uint64 header length, a JSON header (configuration, model
metadata, and an array index), the raw array payloads in index order,
and a trailing SHA-256 over everything before it.  Loads verify magic,
version, and digest before touching any content, so a truncated or
corrupted file is refused whole rather than half-loaded.

Only built-in detectors can be saved: an external scorer is an opaque
callable and an oracle weighting carries a user function, neither of
which survives a file round-trip.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from ._version import __version__
from .core import SnapshotError
from .detectors import (
    IsolationForestScorer,
    KnnScorer,
    ScorerSpec,
    _IsolationTree,
)
from .estimation import AdjustmentTable, EstimationSpec
from .pipeline import FittedPipeline, PipelineConfig
from .resampling import CalibrationModel, StrategySpec

MAGIC = b"CANOMSNP"
FORMAT_VERSION = 1
_DIGEST_BYTES = 32


def _spec_dict(spec):
    return dataclasses.asdict(spec)


class _ArrayStore:
    """Accumulates named arrays for the payload and its header index."""

    def __init__(self):
        self.index = []
        self.payload = []

    def add(self, name, array):
        array = np.ascontiguousarray(array)
        self.index.append({
            "name": name,
            "dtype": array.dtype.str,
            "shape": list(array.shape),
        })
        self.payload.append(array.tobytes())


def _model_entry(model, store, tag):
    if isinstance(model, KnnScorer):
        store.add(f"{tag}/refs", model.refs)
        return {"kind": "knn_distance"}
    if isinstance(model, IsolationForestScorer):
        for t, tree in enumerate(model.trees):
            store.add(f"{tag}/tree{t}/feature", tree.feature)
            store.add(f"{tag}/tree{t}/threshold", tree.threshold)
            store.add(f"{tag}/tree{t}/left", tree.left)
            store.add(f"{tag}/tree{t}/right", tree.right)
            store.add(f"{tag}/tree{t}/size", tree.size)
        return {
            "kind": "isolation_forest",
            "n_trees": len(model.trees),
            "psi": model.psi,
            "n_features": model.n_features,
            "training_size": model.training_size,
        }
    raise SnapshotError(
        "external scorers cannot be snapshotted: the scoring function is "
        "an opaque callable")


def snapshot_save(fp: FittedPipeline, path):
    """Write a fitted pipeline to ``path``; round-trips bit-exactly."""
    if not isinstance(fp, FittedPipeline):
        raise SnapshotError("only a FittedPipeline can be snapshotted")
    if fp.config.weighting == "oracle":
        raise SnapshotError(
            "oracle weighting cannot be snapshotted: the ratio function is "
            "a user-supplied callable")
    if fp.calibration.detached or fp.config.scorer.kind == "external":
        raise SnapshotError(
            "external scorers cannot be snapshotted: the scoring function is "
            "an opaque callable")

    store = _ArrayStore()
    cm = fp.calibration
    store.add("calibration/entry_scores", cm.entry_scores)
    store.add("calibration/cal_rows", cm.cal_rows)
    models_meta = [_model_entry(m, store, f"model{i}")
                   for i, m in enumerate(cm.models)]
    table_meta = None
    if fp.table is not None:
        store.add("table/adjusted", fp.table.adjusted)
        table_meta = {
            "n": fp.table.n,
            "delta": fp.table.delta,
            "method": fp.table.method,
        }
    header = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "config": {
            "scorer": _spec_dict(fp.config.scorer),
            "strategy": _spec_dict(fp.config.strategy),
            "estimation": _spec_dict(fp.config.estimation),
            "weighting": fp.config.weighting,
            "seed": fp.config.seed,
        },
        "calibration": {
            "mode": cm.mode,
            "strategy": _spec_dict(cm.strategy),
            "entry_models": [list(ms) for ms in cm.entry_models],
            "model_train_indices": [list(ix) for ix in cm.model_train_indices],
            "dropped_rows": cm.dropped_rows,
            "models": models_meta,
        },
        "table": table_meta,
        "arrays": store.index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join([
        MAGIC,
        FORMAT_VERSION.to_bytes(4, "little"),
        len(header_bytes).to_bytes(8, "little"),
        header_bytes,
        *store.payload,
    ])
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as handle:
        handle.write(body)
        handle.write(digest)


def _rebuild_model(meta, arrays, tag, spec):
    if meta["kind"] == "knn_distance":
        return KnnScorer(spec, arrays[f"{tag}/refs"])
    trees = [
        _IsolationTree._from_arrays(
            arrays[f"{tag}/tree{t}/feature"],
            arrays[f"{tag}/tree{t}/threshold"],
            arrays[f"{tag}/tree{t}/left"],
            arrays[f"{tag}/tree{t}/right"],
            arrays[f"{tag}/tree{t}/size"],
        )
        for t in range(meta["n_trees"])
    ]
    return IsolationForestScorer(spec, trees, meta["psi"],
                                 meta["n_features"], meta["training_size"])


def _strategy_from(d):
    return StrategySpec(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in d.items()})


def snapshot_load(path) -> FittedPipeline:
    """Read a snapshot back into a FittedPipeline, refusing damaged files."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < len(MAGIC) + 4 + 8 + _DIGEST_BYTES:
        raise SnapshotError("snapshot file is truncated")
    if blob[:len(MAGIC)] != MAGIC:
        raise SnapshotError("not a pipeline snapshot (bad magic)")
    version = int.from_bytes(blob[8:12], "little")
    if version != FORMAT_VERSION:
        raise SnapshotError(
            f"snapshot format version {version} is not supported "
            f"(this build reads version {FORMAT_VERSION})")
    body, digest = blob[:-_DIGEST_BYTES], blob[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise SnapshotError("snapshot integrity check failed "
                            "(file truncated or corrupted)")
    header_len = int.from_bytes(blob[12:20], "little")
    header_end = 20 + header_len
    if header_end > len(body):
        raise SnapshotError("snapshot file is truncated")
    header = json.loads(body[20:header_end].decode("utf-8"))

    arrays = {}
    offset = header_end
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise SnapshotError("snapshot file is truncated")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes

    cfg = header["config"]
    scorer_spec = ScorerSpec(**cfg["scorer"])
    config = PipelineConfig(
        scorer=scorer_spec,
        strategy=_strategy_from(cfg["strategy"]),
        seed=cfg["seed"],
        estimation=EstimationSpec(**cfg["estimation"]),
        weighting=cfg["weighting"],
    )
    cal = header["calibration"]
    models = tuple(
        _rebuild_model(meta, arrays, f"model{i}", scorer_spec)
        for i, meta in enumerate(cal["models"])
    )
    cm = CalibrationModel(
        entry_scores=arrays["calibration/entry_scores"],
        entry_models=tuple(tuple(ms) for ms in cal["entry_models"]),
        models=models,
        mode=cal["mode"],
        strategy=_strategy_from(cal["strategy"]),
        cal_rows=arrays["calibration/cal_rows"],
        model_train_indices=tuple(tuple(ix) for ix in cal["model_train_indices"]),
        dropped_rows=cal["dropped_rows"],
    )
    table = None
    if header["table"] is not None:
        tm = header["table"]
        table = AdjustmentTable(n=tm["n"], delta=tm["delta"], method=tm["method"],
                                adjusted=arrays["table/adjusted"])
    return FittedPipeline(config=config, calibration=cm, table=table)
