"""ReLU networks as explicit weight matrices.

A network is a sequence of affine layers with component-wise ReLU between
consecutive layers and no activation after the last one.  Width counts
hidden-layer neurons only; depth is the number of hidden (activated) layers.
All values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, NetFormatError

__all__ = [
    "AffineLayer",
    "NetDims",
    "ReluNet",
    "affine_net",
    "identity_net",
    "clip_to_box",
    "compose",
    "lipschitz_upper",
    "net_dims",
    "parallel",
    "deserialize",
    "serialize",
]

# Eval decomposes large layers into connected blocks (parallel-built layers
# are block-diagonal) and runs one dense matmul per block.
_BLOCK_MIN_SIZE = 64_000
_BLOCK_MAX_WORK = 0.6


@dataclass(frozen=True)
class AffineLayer:
    """One affine map x -> weights @ x + bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or b.ndim != 1:
            raise DimensionMismatchError("weights must be a matrix and bias a vector")
        if b.shape[0] != w.shape[0]:
            raise DimensionMismatchError(
                f"bias length {b.shape[0]} != weights row count {w.shape[0]}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer entries must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class NetDims:
    width: int
    depth: int
    parameter_count: int


_DEFAULT_META = {
    "construction_tag": "",
    "claimed_width": None,
    "claimed_depth": None,
    "claimed_lipschitz": "none",
}


class ReluNet:
    """Immutable ReLU network: affine layers with ReLU between them.

    ``metadata`` records the construction tag and the claimed width/depth/
    Lipschitz budget; actual dimensions must not exceed the claims.
    """

    __slots__ = ("layers", "input_dim", "metadata", "_csr_cache")

    def __init__(self, layers: Sequence[AffineLayer], input_dim: int, metadata: dict | None = None):
        layers = tuple(layers)
        if not layers:
            raise DimensionMismatchError("a network needs at least one affine layer")
        if layers[0].cols != input_dim:
            raise DimensionMismatchError(
                f"first layer expects {layers[0].cols} inputs, input_dim is {input_dim}"
            )
        for k in range(1, len(layers)):
            if layers[k].cols != layers[k - 1].rows:
                raise DimensionMismatchError(
                    f"layer {k} expects {layers[k].cols} inputs "
                    f"but layer {k - 1} outputs {layers[k - 1].rows}"
                )
        meta = dict(_DEFAULT_META)
        if metadata:
            meta.update(metadata)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_dim", int(input_dim))
        object.__setattr__(self, "metadata", meta)
        object.__setattr__(self, "_csr_cache", {})
        dims = net_dims(self)
        if meta["claimed_width"] is not None and dims.width > meta["claimed_width"]:
            raise ValueError(
                f"actual width {dims.width} exceeds claimed {meta['claimed_width']}"
            )
        if meta["claimed_depth"] is not None and dims.depth > meta["claimed_depth"]:
            raise ValueError(
                f"actual depth {dims.depth} exceeds claimed {meta['claimed_depth']}"
            )

    def __setattr__(self, name, value):
        raise AttributeError("ReluNet is immutable")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @property
    def width(self) -> int:
        if len(self.layers) == 1:
            return 0
        return max(layer.rows for layer in self.layers[:-1])

    def _matmul(self, idx: int, X: np.ndarray) -> np.ndarray:
        w = self.layers[idx].weights
        if w.size >= _BLOCK_MIN_SIZE:
            blocks = self._csr_cache.get(idx)
            if blocks is None:
                blocks = _layer_blocks(w)
                self._csr_cache[idx] = blocks
            if blocks is not False:
                out = np.zeros((X.shape[0], w.shape[0]))
                for rows, cols, sub in blocks:
                    out[:, rows] = X[:, cols] @ sub.T
                return out
        return X @ w.T

    def eval_batch(self, X: np.ndarray) -> np.ndarray:
        """Evaluate on an (n, input_dim) batch, returning (n, output_dim)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"expected input dimension {self.input_dim}, got {X.shape[1]}"
            )
        for idx, layer in enumerate(self.layers):
            X = self._matmul(idx, X) + layer.bias
            if idx < len(self.layers) - 1:
                np.maximum(X, 0.0, out=X)
        return X

    def eval(self, x: Iterable[float]) -> np.ndarray:
        """Evaluate on a single input vector."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.input_dim:
            raise DimensionMismatchError(
                f"expected input dimension {self.input_dim}, got {x.shape[0]}"
            )
        return self.eval_batch(x[None, :])[0]

    def __call__(self, x):
        return self.eval(x)

    def __repr__(self):
        tag = self.metadata.get("construction_tag", "")
        return (
            f"ReluNet(tag={tag!r}, in={self.input_dim}, out={self.output_dim}, "
            f"width={self.width}, depth={self.depth})"
        )


def _layer_blocks(w: np.ndarray):
    """Connected row/col blocks of a matrix, or False when not worthwhile."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    R, C = w.shape
    rr, cc = np.nonzero(w)
    if rr.size == 0:
        return []
    adj = coo_matrix((np.ones(rr.size), (rr, R + cc)), shape=(R + C, R + C))
    n_comp, labels = connected_components(adj, directed=False)
    blocks = []
    work = 0
    for k in range(n_comp):
        rows = np.flatnonzero(labels[:R] == k)
        cols = np.flatnonzero(labels[R:] == k)
        if rows.size and cols.size:
            blocks.append((rows, cols, np.ascontiguousarray(w[np.ix_(rows, cols)])))
            work += rows.size * cols.size
    if work > _BLOCK_MAX_WORK * R * C or len(blocks) <= 1:
        return False
    return blocks


def net_dims(net: ReluNet) -> NetDims:
    params = sum(l.rows * (l.cols + 1) for l in net.layers)
    return NetDims(width=net.width, depth=net.depth, parameter_count=params)


def affine_net(weights, bias, tag: str = "affine", claimed_lipschitz="none") -> ReluNet:
    """Network with no hidden layer: a bare affine map."""
    layer = AffineLayer(np.asarray(weights, dtype=float), np.asarray(bias, dtype=float))
    return ReluNet(
        [layer],
        input_dim=layer.cols,
        metadata={
            "construction_tag": tag,
            "claimed_width": 0,
            "claimed_depth": 0,
            "claimed_lipschitz": claimed_lipschitz,
        },
    )


def identity_net(dim: int) -> ReluNet:
    return affine_net(np.eye(dim), np.zeros(dim), tag="identity", claimed_lipschitz=1.0)


def _combine_lipschitz(a, b, how):
    if a == "none" or b == "none" or a is None or b is None:
        return "none"
    return how(float(a), float(b))


def compose(outer: ReluNet, inner: ReluNet) -> ReluNet:
    """Network computing outer(inner(x)).

    The junction merges inner's output affine with outer's input affine into a
    single layer, so evaluation agrees with evaluating the parts in sequence.
    """
    if inner.output_dim != outer.input_dim:
        raise DimensionMismatchError(
            f"inner outputs {inner.output_dim}, outer expects {outer.input_dim}"
        )
    wi, bi = inner.layers[-1].weights, inner.layers[-1].bias
    wo, bo = outer.layers[0].weights, outer.layers[0].bias
    junction = AffineLayer(wo @ wi, wo @ bi + bo)
    layers = list(inner.layers[:-1]) + [junction] + list(outer.layers[1:])
    m_in, m_out = inner.metadata, outer.metadata
    cw = None
    if m_in["claimed_width"] is not None and m_out["claimed_width"] is not None:
        cw = max(m_in["claimed_width"], m_out["claimed_width"])
    cd = None
    if m_in["claimed_depth"] is not None and m_out["claimed_depth"] is not None:
        cd = m_in["claimed_depth"] + m_out["claimed_depth"] + 1
    meta = {
        "construction_tag": f"compose({m_out['construction_tag']},{m_in['construction_tag']})",
        "claimed_width": cw,
        "claimed_depth": cd,
        "claimed_lipschitz": _combine_lipschitz(
            m_in["claimed_lipschitz"], m_out["claimed_lipschitz"], lambda a, b: a * b
        ),
    }
    return ReluNet(layers, input_dim=inner.input_dim, metadata=meta)


def _pad_to_depth(net: ReluNet, depth: int, lower_bounds=None):
    """Extend a net with passthrough hidden layers so it has `depth` hidden layers.

    With known per-output lower bounds c the passthrough is one channel per
    coordinate, t -> sigma(t - c) (+c restored at the end); otherwise the
    two-channel split t -> (sigma(t), sigma(-t)).  Returns the complete
    affine list (hidden affines plus the final output affine).
    """
    extra = depth - net.depth
    if extra < 0:
        raise ValueError("cannot shrink depth")
    if extra == 0:
        return list(net.layers)
    d = net.output_dim
    if lower_bounds is not None:
        lo = np.asarray(lower_bounds, dtype=float).reshape(-1)
        if lo.shape[0] != d:
            raise DimensionMismatchError("lower_bounds length must match output dim")
        enc_w, enc_b = np.eye(d), -lo
        dec_w, dec_b = np.eye(d), lo
        chans = d
    else:
        enc_w = np.vstack([np.eye(d), -np.eye(d)])
        enc_b = np.zeros(2 * d)
        dec_w = np.hstack([np.eye(d), -np.eye(d)])
        dec_b = np.zeros(d)
        chans = 2 * d
    last = net.layers[-1]
    layers = list(net.layers[:-1])
    layers.append(AffineLayer(enc_w @ last.weights, enc_w @ last.bias + enc_b))
    for _ in range(extra - 1):
        layers.append(AffineLayer(np.eye(chans), np.zeros(chans)))
    layers.append(AffineLayer(dec_w, dec_b))
    return layers


def parallel(nets: Sequence[ReluNet], lower_bounds=None) -> ReluNet:
    """Stack nets sharing input_dim; output is the concatenation of outputs.

    Shorter components are padded to the common depth with passthrough
    channels.  `lower_bounds` is an optional per-net list: entry i gives
    per-output lower bounds for net i (1 channel per padded coordinate) or
    None for the two-channel split.
    """
    nets = list(nets)
    if not nets:
        raise ValueError("parallel of no nets")
    d_in = nets[0].input_dim
    for n in nets:
        if n.input_dim != d_in:
            raise DimensionMismatchError("parallel components must share input_dim")
    if lower_bounds is None:
        lower_bounds = [None] * len(nets)
    depth = max(n.depth for n in nets)
    padded = [_pad_to_depth(n, depth, lb) for n, lb in zip(nets, lower_bounds)]

    out_layers = []
    for k in range(depth + 1):
        blocks = [layers[k] for layers in padded]
        if k == 0:
            w = np.vstack([b.weights for b in blocks])
        else:
            rows = sum(b.rows for b in blocks)
            cols = sum(b.cols for b in blocks)
            w = np.zeros((rows, cols))
            r = c = 0
            for b in blocks:
                w[r : r + b.rows, c : c + b.cols] = b.weights
                r += b.rows
                c += b.cols
        bvec = np.concatenate([b.bias for b in blocks])
        out_layers.append(AffineLayer(w, bvec))

    tags = ",".join(n.metadata["construction_tag"] for n in nets)
    meta = {
        "construction_tag": f"parallel({tags})",
        "claimed_width": None,
        "claimed_depth": None,
        "claimed_lipschitz": "none",
    }
    return ReluNet(out_layers, input_dim=d_in, metadata=metadata_with_actuals(out_layers, meta))


def metadata_with_actuals(layers, meta):
    """Fill claimed width/depth from actual dimensions when unset."""
    meta = dict(meta)
    if meta.get("claimed_depth") is None:
        meta["claimed_depth"] = len(layers) - 1
    if meta.get("claimed_width") is None:
        meta["claimed_width"] = max((l.rows for l in layers[:-1]), default=0)
    return meta


def clip_to_box(net: ReluNet, lo, hi) -> ReluNet:
    """Clamp every output coordinate into [lo_i, hi_i] with one extra hidden layer.

    Uses min(max(t, lo), hi) = sigma(t - lo) - sigma(t - hi) + lo.
    """
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    d = net.output_dim
    if lo.shape[0] != d or hi.shape[0] != d:
        raise DimensionMismatchError("box dimension must equal net output dim")
    if not np.all(lo < hi):
        raise ValueError("malformed box: need lo < hi component-wise")
    enc_w = np.vstack([np.eye(d), np.eye(d)])
    enc_b = np.concatenate([-lo, -hi])
    dec_w = np.hstack([np.eye(d), -np.eye(d)])
    dec_b = lo.copy()
    last = net.layers[-1]
    layers = list(net.layers[:-1])
    layers.append(AffineLayer(enc_w @ last.weights, enc_w @ last.bias + enc_b))
    layers.append(AffineLayer(dec_w, dec_b))
    meta = dict(net.metadata)
    meta["construction_tag"] = f"clip({meta['construction_tag']})"
    if meta["claimed_depth"] is not None:
        meta["claimed_depth"] += 1
    if meta["claimed_width"] is not None:
        meta["claimed_width"] = max(meta["claimed_width"], 2 * d)
    return ReluNet(layers, input_dim=net.input_dim, metadata=meta)


def _spectral_norm(w: np.ndarray, rel_tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on w^T w."""
    if w.size == 0:
        return 0.0
    if min(w.shape) == 1:
        return float(np.linalg.norm(w))
    g = w.T @ w if w.shape[0] >= w.shape[1] else w @ w.T
    v = np.ones(g.shape[0]) + 1e-3 * np.arange(g.shape[0])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        v = g @ v
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            return 0.0
        v /= nrm
        if abs(nrm - prev) <= rel_tol * nrm:
            break
        prev = nrm
    return float(np.sqrt(nrm))


def lipschitz_upper(net: ReluNet) -> float:
    """Product of layer spectral norms: an upper bound on Lip w.r.t. ||.||_2."""
    out = 1.0
    for layer in net.layers:
        out *= _spectral_norm(layer.weights)
    return out


def serialize(net: ReluNet) -> bytes:
    """Encode as a UTF-8 JSON document; weights round-trip bit-exactly."""
    doc = {
        "version": 1,
        "input_dim": net.input_dim,
        "layers": [
            {
                "rows": l.rows,
                "cols": l.cols,
                "weights": [float(v) for v in l.weights.ravel()],
                "bias": [float(v) for v in l.bias],
            }
            for l in net.layers
        ],
        "metadata": {
            "construction_tag": net.metadata["construction_tag"],
            "claimed_width": net.metadata["claimed_width"],
            "claimed_depth": net.metadata["claimed_depth"],
            "claimed_lipschitz": net.metadata["claimed_lipschitz"],
        },
    }
    return json.dumps(doc).encode("utf-8")


def deserialize(data: bytes) -> ReluNet:
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        doc = json.loads(data.decode("utf-8"))
    except json.JSONDecodeError as e:
        raise NetFormatError(f"invalid JSON: {e.msg}", offset=e.pos) from e
    except UnicodeDecodeError as e:
        raise NetFormatError("stream is not UTF-8", offset=e.start) from e
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise NetFormatError("unsupported or missing version marker", offset=0)
    raw_layers = doc.get("layers")
    if not raw_layers:
        raise NetFormatError("network has no layers", offset=0)
    layers = []
    for i, rl in enumerate(raw_layers):
        try:
            rows, cols = int(rl["rows"]), int(rl["cols"])
            wflat = np.asarray(rl["weights"], dtype=float)
            bias = np.asarray(rl["bias"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise NetFormatError(f"layer {i} malformed: {e}", offset=0) from e
        if wflat.shape[0] != rows * cols:
            raise NetFormatError(
                f"layer {i}: expected {rows * cols} weights, got {wflat.shape[0]}", offset=0
            )
        layers.append(AffineLayer(wflat.reshape(rows, cols), bias))
    try:
        return ReluNet(layers, input_dim=int(doc["input_dim"]), metadata=doc.get("metadata"))
    except (KeyError, DimensionMismatchError, ValueError) as e:
        raise NetFormatError(f"inconsistent network: {e}", offset=0) from e
