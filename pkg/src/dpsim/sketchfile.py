"""Self-describing binary container for built structures.

Layout (all integers little-endian)::

    b"DPSIM1" | u16 version | u16 function id | u32 header length
    | header: UTF-8 JSON, sorted keys, compact separators
    | payload: little-endian float64 values

The header carries every scalar parameter and the public seeds of feature
maps and projections. The payload carries the released numbers: node
values, noisy means and noisy feature vectors. JSON floats are written with
their shortest round-trip repr, so ``dumps(loads(b)) == b`` for every valid
file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from dpsim.classify import DpClassifier, predict
from dpsim.core import DomainPromise, PrivacyBudget
from dpsim.highdim import L1Structure, L2Structure, query_l1, query_l2, query_lpp
from dpsim.kde import DpKdeSketch, FeatureMapSpec, query_kde
from dpsim.l2sq import NoisyMoments, query_l2sq
from dpsim.onedim import NoisyTree
from dpsim.projections import L2Embedding, ProjectionSpec
from dpsim.smooth import ExpSumApprox, SmoothKdeSketch, query_smooth_kde

MAGIC = b"DPSIM1"
VERSION = 1
_PREFIX = struct.Struct("<6sHHI")
_F8 = np.dtype("<f8")

FUNCTION_IDS = {
    "l1": 1, "l2": 2, "l2sq": 3, "lpp": 4, "gauss-kde": 5, "exp-kde": 6, "laplace-kde": 7,
    "inv1p-l2": 8, "inv1p-l2sq": 9, "inv1p-l1": 10, "classifier": 11,
}
FUNCTION_NAMES = {v: k for k, v in FUNCTION_IDS.items()}
KDE_FUNCTIONS = {"gauss-kde": "gaussian", "exp-kde": "exponential", "laplace-kde": "laplacian"}


class SketchFormatError(ValueError):
    """The bytes are not a readable sketch file."""


@dataclass(frozen=True, eq=False)
class SketchFile:
    fn: str
    structure: Any

    @property
    def function_id(self) -> int:
        return FUNCTION_IDS[self.fn]

    @property
    def noise_off(self) -> bool:
        return bool(self.structure.noise_off)


class _Payload:
    def __init__(self, data: np.ndarray):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> np.ndarray:
        if self.pos + count > self.data.size:
            raise SketchFormatError("payload is shorter than the header promises")
        out = self.data[self.pos:self.pos + count].astype(np.float64)
        self.pos += count
        out.setflags(write=False)
        return out


def _promise(p: DomainPromise) -> dict:
    return {"kind": p.kind, "radius": float(p.radius), "dim": int(p.dim)}


def _spec_or_none(spec):
    return None if spec is None else spec.to_dict()


def _tree_header(t: NoisyTree) -> dict:
    return {"n": t.n, "grid_n": t.grid_n, "depth": t.depth, "eta": float(t.eta),
            "epsilon": float(t.epsilon), "noise_off": t.noise_off, "scale": float(t.scale)}


def _l1_header(s: L1Structure) -> dict:
    return {"epsilon": s.budget.epsilon, "delta": s.budget.delta,
            "per_tree_epsilon": float(s.per_tree_epsilon), "promise": _promise(s.promise),
            "alpha": s.alpha, "p": s.p, "clip_count": s.clip_count,
            "trees": [_tree_header(t) for t in s.trees]}


def _read_l1(h: dict, payload: _Payload) -> L1Structure:
    trees = []
    for th in h["trees"]:
        values = payload.take(2 * (1 << th["depth"]) - 1)
        trees.append(NoisyTree(n=th["n"], grid_n=th["grid_n"], depth=th["depth"],
                               node_values=values, eta=th["eta"], epsilon=th["epsilon"],
                               noise_off=th["noise_off"], scale=th["scale"]))
    return L1Structure(trees=tuple(trees), budget=PrivacyBudget(h["epsilon"], h["delta"]),
                       per_tree_epsilon=h["per_tree_epsilon"],
                       promise=DomainPromise(**h["promise"]), alpha=h["alpha"], p=h["p"],
                       clip_count=h["clip_count"])


def _moments_header(m: NoisyMoments) -> dict:
    return {"n": m.n, "dim": m.dim, "promise": _promise(m.promise), "epsilon": m.epsilon,
            "mean_scale": m.mean_scale, "spread_scale": m.spread_scale,
            "noise_off": m.noise_off, "clip_count": m.clip_count}


def _read_moments(h: dict, payload: _Payload) -> NoisyMoments:
    values = payload.take(h["dim"] + 1)
    mean = values[:-1].copy()
    mean.setflags(write=False)
    return NoisyMoments(noisy_mean=mean, noisy_s=float(values[-1]), n=h["n"],
                        promise=DomainPromise(**h["promise"]), epsilon=h["epsilon"],
                        mean_scale=h["mean_scale"], spread_scale=h["spread_scale"],
                        noise_off=h["noise_off"], clip_count=h["clip_count"])


def _kde_header(s: DpKdeSketch) -> dict:
    return {"features": s.spec.to_dict(), "projection": _spec_or_none(s.projection), "n": s.n,
            "epsilon": s.epsilon, "alpha": s.alpha, "noise_scale": s.noise_scale,
            "noise_off": s.noise_off}


def _read_kde(h: dict, payload: _Payload) -> DpKdeSketch:
    spec = FeatureMapSpec.from_dict(h["features"])
    proj = None if h["projection"] is None else ProjectionSpec.from_dict(h["projection"])
    return DpKdeSketch(noisy_mean_features=payload.take(spec.n_features), spec=spec,
                       projection=proj, n=h["n"], epsilon=h["epsilon"], alpha=h["alpha"],
                       noise_scale=h["noise_scale"], noise_off=h["noise_off"])


def _encode(fn: str, s) -> tuple[dict, list[np.ndarray]]:
    if fn in ("l1", "lpp"):
        return _l1_header(s), [t.node_values for t in s.trees]
    if fn == "l2":
        e = s.embedding
        h = {"embedding": {"spec": e.spec.to_dict(), "clip": e.clip, "clip_count": e.clip_count,
                           "promise": _promise(e.promise)},
             "l1": _l1_header(s.l1)}
        return h, [t.node_values for t in s.l1.trees]
    if fn == "l2sq":
        return _moments_header(s), [s.noisy_mean, [s.noisy_s]]
    if fn in KDE_FUNCTIONS:
        return _kde_header(s), [s.noisy_mean_features]
    if fn.startswith("inv1p"):
        h = {"kernel": s.kernel, "epsilon": s.epsilon, "alpha": s.alpha,
             "projection": _spec_or_none(s.projection), "step": s.approx.step,
             "approx_alpha": s.approx.alpha, "terms": s.approx.n_terms,
             "subs": [_kde_header(k) for k in s.sub_sketches]}
        blocks = [s.approx.weights, s.approx.nodes]
        return h, blocks + [k.noisy_mean_features for k in s.sub_sketches]
    if fn == "classifier":
        h = {"labels": s.labels.tolist(), "epsilon": s.budget.epsilon, "delta": s.budget.delta,
             "projection": _spec_or_none(s.projection), "clip": s.clip,
             "input_dim": s.input_dim, "classes": [_moments_header(m) for m in s.moments]}
        blocks = []
        for m in s.moments:
            blocks += [m.noisy_mean, [m.noisy_s]]
        return h, blocks
    raise SketchFormatError(f"unknown function {fn!r}")


def _decode(fn: str, h: dict, payload: _Payload):
    if fn in ("l1", "lpp"):
        return _read_l1(h, payload)
    if fn == "l2":
        e = h["embedding"]
        emb = L2Embedding(spec=ProjectionSpec.from_dict(e["spec"]), clip=e["clip"],
                          points=np.empty((0, e["spec"]["out_dim"])),
                          promise=DomainPromise(**e["promise"]), clip_count=e["clip_count"])
        return L2Structure(embedding=emb, l1=_read_l1(h["l1"], payload))
    if fn == "l2sq":
        return _read_moments(h, payload)
    if fn in KDE_FUNCTIONS:
        return _read_kde(h, payload)
    if fn.startswith("inv1p"):
        j = h["terms"]
        approx = ExpSumApprox(weights=payload.take(j), nodes=payload.take(j),
                              alpha=h["approx_alpha"], step=h["step"])
        subs = tuple(_read_kde(sh, payload) for sh in h["subs"])
        proj = None if h["projection"] is None else ProjectionSpec.from_dict(h["projection"])
        return SmoothKdeSketch(sub_sketches=subs, approx=approx, kernel=h["kernel"],
                               epsilon=h["epsilon"], alpha=h["alpha"], projection=proj)
    if fn == "classifier":
        moments = tuple(_read_moments(mh, payload) for mh in h["classes"])
        labels = np.asarray(h["labels"])
        labels.setflags(write=False)
        proj = None if h["projection"] is None else ProjectionSpec.from_dict(h["projection"])
        return DpClassifier(moments=moments, labels=labels,
                            budget=PrivacyBudget(h["epsilon"], h["delta"]), projection=proj,
                            clip=h["clip"], input_dim=h["input_dim"])
    raise SketchFormatError(f"unknown function {fn!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps(sketch: SketchFile) -> bytes:
    header, blocks = _encode(sketch.fn, sketch.structure)
    header = _jsonable({"fn": sketch.fn, "noise_off": sketch.noise_off, "params": header})
    text = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)
    raw = text.encode("utf-8")
    payload = np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in blocks])
    return (_PREFIX.pack(MAGIC, VERSION, sketch.function_id, len(raw)) + raw
            + payload.astype(_F8).tobytes())


def loads(data: bytes) -> SketchFile:
    """Parse a sketch file.

    Raises:
      SketchFormatError: on a wrong magic, unknown version or function id,
        malformed header, or a payload whose length disagrees with the header.
    """
    if len(data) < _PREFIX.size:
        raise SketchFormatError("file is too short to be a sketch")
    magic, version, fid, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise SketchFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SketchFormatError(f"unsupported sketch version {version}")
    if fid not in FUNCTION_NAMES:
        raise SketchFormatError(f"unknown function id {fid}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SketchFormatError(f"malformed header: {exc}") from None
    fn = FUNCTION_NAMES[fid]
    if header.get("fn") != fn:
        raise SketchFormatError(f"header function {header.get('fn')!r} != id {fid}")
    body = data[start + hlen:]
    if len(body) % 8:
        raise SketchFormatError("payload length is not a multiple of 8")
    payload = _Payload(np.frombuffer(body, dtype=_F8))
    try:
        structure = _decode(fn, header["params"], payload)
    except (KeyError, TypeError) as exc:
        raise SketchFormatError(f"header is missing or mistypes {exc}") from None
    if payload.pos != payload.data.size:
        raise SketchFormatError("payload is longer than the header promises")
    return SketchFile(fn=fn, structure=structure)


def save(sketch: SketchFile, path) -> None:
    Path(path).write_bytes(dumps(sketch))


def load(path) -> SketchFile:
    return loads(Path(path).read_bytes())


def query(sketch: SketchFile, y):
    """Answer queries ``(d,)`` or ``(q, d)`` with the structure's own query routine."""
    fn, s = sketch.fn, sketch.structure
    if fn == "l1":
        return query_l1(s, y)
    if fn == "lpp":
        return query_lpp(s, y)
    if fn == "l2":
        return query_l2(s, y)
    if fn == "l2sq":
        return query_l2sq(s, y)
    if fn in KDE_FUNCTIONS:
        return query_kde(s, y)
    if fn.startswith("inv1p"):
        return query_smooth_kde(s, y)
    return predict(s, y)


def input_dim(sketch: SketchFile) -> int:
    s = sketch.structure
    if sketch.fn in ("l1", "lpp"):
        return s.dim
    if sketch.fn == "l2":
        return s.embedding.spec.in_dim
    if sketch.fn == "l2sq":
        return s.dim
    return s.input_dim
