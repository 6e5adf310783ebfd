"""Piecewise-linear interpolation and grid-discretization networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._pwlbuild import build_pwl_net, eval_pwl_arrays
from .errors import CapacityError, GuardError
from .netcore import AffineLayer, ReluNet, affine_net, compose, parallel

__all__ = [
    "KnotSamples",
    "PwlOracle",
    "eval_pwl",
    "linear_interpolator",
    "pwl_path_net",
    "discretizer",
    "discretizer_resolution",
]


@dataclass(frozen=True)
class KnotSamples:
    """Samples (xs_i, ys_i) with strictly increasing xs; ys may be vectors."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if ys.ndim == 1:
            ys = ys[:, None]
        if xs.ndim != 1 or ys.shape[0] != xs.shape[0]:
            raise ValueError("xs must be 1-D and match ys length")
        if xs.shape[0] >= 2 and not np.all(np.diff(xs) > 0):
            raise ValueError("xs must be strictly increasing")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("knot samples must be finite")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n_interior(self) -> int:
        """N in the capacity formulas: sample count minus the two endpoints."""
        return max(self.xs.shape[0] - 2, 0)

    @property
    def value_dim(self) -> int:
        return self.ys.shape[1]

    def max_slope(self) -> float:
        if self.xs.shape[0] < 2:
            return 0.0
        seg = np.linalg.norm(np.diff(self.ys, axis=0), axis=1) / np.diff(self.xs)
        return float(np.max(seg))


@dataclass(frozen=True)
class PwlOracle:
    """Reference evaluator for the interpolant of the given knots."""

    knots: KnotSamples


def eval_pwl(oracle, x):
    """Exact interpolant: matches ys at knots, linear between, constant outside."""
    knots = oracle.knots if isinstance(oracle, PwlOracle) else oracle
    out = eval_pwl_arrays(knots.xs, knots.ys, x)
    if knots.value_dim == 1 and np.ndim(out) >= 1:
        out = np.asarray(out)
        return out[..., 0] if out.shape[-1] == 1 else out
    return out


def linear_interpolator(samples: KnotSamples, W: int, L: int) -> ReluNet:
    """Net realizing the 1-D interpolant of the samples within (W+2, 2L).

    Capacity: N <= floor(W/6) * W * L interior samples.
    """
    if samples.value_dim != 1:
        raise ValueError("linear_interpolator takes scalar-valued samples")
    if W < 6 or L < 1:
        raise GuardError("need W >= 6 and L >= 1")
    N = samples.n_interior
    cap = (W // 6) * W * L
    if N > cap:
        raise CapacityError(
            f"N = {N} interior samples exceeds floor(W/6)*W*L = "
            f"floor({W}/6)*{W}*{L} = {cap}"
        )
    return build_pwl_net(
        samples.xs,
        samples.ys,
        width=W + 2,
        depth=2 * L,
        tag="linear_interpolator",
        metadata={"claimed_lipschitz": samples.max_slope()},
    )


def pwl_path_net(samples: KnotSamples, W: int, L: int) -> ReluNet:
    """Net realizing a piecewise-linear path R -> R^d within (W, L).

    Capacity: N <= (W-d-1) * floor((W-d-1)/(6d)) * floor(L/2).
    """
    d = samples.value_dim
    if W < 7 * d + 1 or L < 2:
        raise GuardError(f"need W >= 7d+1 = {7 * d + 1} and L >= 2")
    N = samples.n_interior
    cap = (W - d - 1) * ((W - d - 1) // (6 * d)) * (L // 2)
    if N > cap:
        raise CapacityError(
            f"N = {N} interior breakpoints exceeds "
            f"(W-d-1)*floor((W-d-1)/(6d))*floor(L/2) = {cap}"
        )
    return build_pwl_net(
        samples.xs,
        samples.ys,
        width=W,
        depth=L,
        tag="pwl_path_net",
        metadata={"claimed_lipschitz": samples.max_slope()},
    )


def discretizer_resolution(W: int, L: int, d: int) -> int:
    """Grid resolution K = floor((WL)^(2/d)) of the discretizer."""
    return int(np.floor((W * L) ** (2.0 / d) + 1e-9))


def _staircase_samples(K, step, delta, top_x):
    """Samples of the plateau staircase: value k/K on [k*step, (k+1)*step - delta]."""
    xs, ys = [], []
    for k in range(K):
        xs.append(k * step)
        ys.append(k)
        if k < K - 1:
            xs.append((k + 1) * step - delta)
            ys.append(k)
    xs.append(top_x)
    ys.append(K - 1)
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


def discretizer(W: int, L: int, d: int, delta: float) -> ReluNet:
    """One-dimensional plateau map: x in [k/K, (k+1)/K - delta] -> k/K.

    K = floor((WL)^(2/d)); range is contained in [0, 1]; fits in width
    4W+3 and depth 4L.  For d = 1 the K = W^2 L^2 plateaus are produced by a
    coarse staircase with M = W^2 L steps refined L-fold through composition;
    for d >= 2 a single interpolation suffices.
    """
    if W < 6 or L < 2 or d < 1:
        raise GuardError("need W >= 6, L >= 2, d >= 1")
    K = discretizer_resolution(W, L, d)
    if not (0.0 < delta <= 1.0 / (3 * K)):
        raise ValueError(f"delta must lie in (0, 1/(3K)] = (0, {1.0 / (3 * K)}]")
    meta = {
        "construction_tag": f"discretizer(W={W},L={L},d={d})",
        "claimed_width": 4 * W + 3,
        "claimed_depth": 4 * L,
        "claimed_lipschitz": 2.0 * L / (K * K * delta * delta),
    }
    if d >= 2:
        xs, ks = _staircase_samples(K, 1.0 / K, delta, 1.0)
        net = build_pwl_net(xs, ks / K, width=4 * W + 2, depth=2 * L, tag=meta["construction_tag"])
        return ReluNet(net.layers, 1, metadata=meta)

    # d = 1: phi(x) = phi1(x)/M + phi2(sigma(x) - phi1(x)/M)/(M L), K = M L
    M = W * W * L
    xs1, ys1 = _staircase_samples(M, 1.0 / M, delta, 1.0)
    phi1 = build_pwl_net(xs1, ys1, width=4 * W + 2, depth=2 * L, tag="disc-coarse")
    xs2, ys2 = _staircase_samples(L, 1.0 / (M * L), delta, 1.0 / M)
    phi2 = build_pwl_net(xs2, ys2, width=8, depth=2 * L, tag="disc-refine")

    relu_x = ReluNet(
        [AffineLayer(np.array([[1.0]]), np.zeros(1)), AffineLayer(np.array([[1.0]]), np.zeros(1))],
        1,
        metadata={"construction_tag": "relu"},
    )
    stage1 = parallel([phi1, relu_x], lower_bounds=[[0.0], [0.0]])
    # (phi1, sigma(x)) -> (sigma(x) - phi1/M, phi1)
    junction = affine_net([[-1.0 / M, 1.0], [1.0, 0.0]], [0.0, 0.0], tag="disc-junction")
    keeper = affine_net([[0.0, 1.0]], [0.0], tag="keep")
    phi2_sel = compose(phi2, affine_net([[1.0, 0.0]], [0.0], tag="sel"))
    stage2 = parallel([phi2_sel, keeper], lower_bounds=[[0.0], [0.0]])
    out = affine_net([[1.0 / (M * L), 1.0 / M]], [0.0], tag="disc-out")
    net = compose(out, compose(stage2, compose(junction, stage1)))
    return ReluNet(net.layers, 1, metadata=meta)
