"""Bit-extraction, binary fitting, and approximate data-fitting networks.

The three constructions share one engine: pack target values into the binary
digits of few interpolated reals, then recover digit l with a small network
that repeatedly doubles the remaining fraction and thresholds it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._pwlbuild import build_pwl_net
from .errors import CapacityError, GuardError
from .netcore import AffineLayer, ReluNet, affine_net, clip_to_box, compose, parallel

__all__ = [
    "BitString",
    "bit_extractor",
    "binary_fitter",
    "value_fitter",
    "truncated_bits",
]

# Slopes inside the extractor reach 2^(L^2); beyond L = 10 the dynamic range
# leaves no room for meaningful numeric verification.
_MAX_L = 10


@dataclass(frozen=True)
class BitString:
    """Bits b_1..b_L and the real value sum b_j 2^-j they encode."""

    bits: tuple

    def __post_init__(self):
        if not all(b in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0/1")
        if len(self.bits) > 52:
            raise ValueError("more than 52 bits does not round-trip in a double")

    @property
    def value(self) -> float:
        v = 0.0
        for j, b in enumerate(self.bits, start=1):
            v += b * 2.0 ** (-j)
        return v

    @classmethod
    def from_value(cls, value: float, length: int) -> "BitString":
        bits = truncated_bits(value, length)
        return cls(tuple(bits))


def truncated_bits(value: float, length: int):
    """Greedy binary expansion: |value - sum b_j 2^-j| <= 2^-length for value in [0,1]."""
    if not 0.0 <= value <= 1.0:
        raise ValueError("value must lie in [0, 1]")
    bits = []
    r = value
    for j in range(1, length + 1):
        p = 2.0 ** (-j)
        if r >= p:
            bits.append(1)
            r -= p
        else:
            bits.append(0)
    return bits


def _extractor_matrices(L: int):
    """Affine pieces of one state-update step of the extractor.

    State s = (remaining fraction xi, partial sum, countdown l-j+1).
    Layer A computes 8 ReLU features; layer B reduces them to 4; the state
    map recovers (xi', sum', countdown-1) from the 4 features.
    """
    Ma = np.zeros((8, 3))
    ba = np.zeros(8)
    Ma[0, 0] = 1.0                       # sigma(t1)
    Ma[1, 0] = 2.0 ** L                  # sigma(2^L t1 - 2^(L-1) + 1)
    ba[1] = -(2.0 ** (L - 1)) + 1.0
    Ma[2, 0] = 2.0 ** L                  # sigma(2^L t1 - 2^(L-1))
    ba[2] = -(2.0 ** (L - 1))
    Ma[3, 1] = 1.0                       # sigma(t2)
    Ma[4, 2] = 1.0                       # sigma(t3)
    Ma[5, 2] = 1.0                       # sigma(t3 - 2)
    ba[5] = -2.0
    Ma[6, 2] = 1.0                       # sigma(t3 - 1)
    ba[6] = -1.0
    Ma[7, 2] = 1.0                       # sigma(t3 - 1 + L)
    ba[7] = -1.0 + L

    Mb = np.zeros((4, 8))
    bb = np.zeros(4)
    # T(t1) = a2 - a3 is the extracted bit; delta-gate = a5 + a6 - 2 a7
    Mb[0, 0], Mb[0, 1], Mb[0, 2] = 2.0, -1.0, 1.0        # sigma(2 sigma(t1) - T)
    Mb[1, 3] = 1.0                                        # sigma(t2) passthrough
    Mb[2, 4], Mb[2, 5], Mb[2, 6] = 1.0, 1.0, -2.0         # sigma(delta + T - 1)
    Mb[2, 1], Mb[2, 2] = 1.0, -1.0
    bb[2] = -1.0
    Mb[3, 7] = 1.0                                        # sigma(t3 - 1 + L)

    Ms = np.zeros((3, 4))
    bs = np.zeros(3)
    Ms[0, 0] = 1.0
    Ms[1, 1], Ms[1, 2] = 1.0, 1.0
    Ms[2, 3] = 1.0
    bs[2] = -float(L)
    return Ma, ba, Mb, bb, Ms, bs


def bit_extractor(L: int) -> ReluNet:
    """Net phi(x, l) = l-th binary digit of x = 0.x_1...x_L, width 8, depth 2L."""
    if not 1 <= L <= _MAX_L:
        raise GuardError(f"L must be in 1..{_MAX_L} (slope guard 2^(L^2))")
    Ma, ba, Mb, bb, Ms, bs = _extractor_matrices(L)
    init = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])  # (x, l) -> (x, 0, l)
    layers = [AffineLayer(Ma @ init, ba)]
    for step in range(L):
        layers.append(AffineLayer(Mb, bb))
        if step < L - 1:
            layers.append(AffineLayer(Ma @ Ms, Ma @ bs + ba))
    out = np.array([[0.0, 1.0, 1.0, 0.0]])  # partial sum component of Ms
    layers.append(AffineLayer(out @ np.eye(4), np.zeros(1)))
    meta = {
        "construction_tag": f"bit_extractor(L={L})",
        "claimed_width": 8,
        "claimed_depth": 2 * L,
        "claimed_lipschitz": 2.0 * 2.0 ** (L * L) + L,
    }
    return ReluNet(layers, input_dim=2, metadata=meta)


def _packed_values(theta: np.ndarray, M: int, L: int):
    """y_m = 0.b_{m,0}...b_{m,L-1} for theta laid out as i = m L + l, plus y_M = 1."""
    y = np.zeros(M + 1)
    for m in range(M):
        v = 0.0
        for l in range(L):
            v += theta[m * L + l] * 2.0 ** (-(l + 1))
        y[m] = v
    y[M] = 1.0
    return y


def _fitter_knots(M: int, L: int, values: np.ndarray):
    """Sample set {(mL, v_m)} U {(mL-1, v_{m-1})} as sorted arrays."""
    xs = [0.0]
    ys = [values[0]]
    for m in range(1, M + 1):
        xs.extend([m * L - 1.0, float(m * L)])
        ys.extend([values[m - 1], values[m]])
    return np.asarray(xs), np.asarray(ys)


def binary_fitter(theta, W: int, L: int) -> ReluNet:
    """Net with phi(i) = theta_i for i = 0..W^2 L^2 - 1, width 8W+4, depth 4L."""
    theta = np.asarray(theta)
    if W < 6 or not 2 <= L <= _MAX_L:
        raise GuardError(f"need W >= 6 and 2 <= L <= {_MAX_L}")
    M = W * W * L
    if theta.shape != (W * W * L * L,):
        raise ValueError(f"theta must have length W^2 L^2 = {W * W * L * L}")
    if not np.all(np.isin(theta, (0, 1))):
        raise ValueError("theta entries must be 0/1")
    y = _packed_values(theta.astype(float), M, L)
    xs1, ys1 = _fitter_knots(M, L, y)
    phi1 = build_pwl_net(xs1, ys1, width=4 * W + 2, depth=2 * L, tag="binfit-values")
    lvals = np.zeros(M + 1)
    xs2, ys2 = _fitter_knots(M, L, lvals)
    ys2 = np.where(np.isin(xs2, np.arange(1, M + 1) * L - 1.0), float(L - 1), 0.0)
    phi2 = build_pwl_net(xs2, ys2, width=4 * W + 2, depth=2 * L, tag="binfit-index")
    stage = parallel([phi1, phi2], lower_bounds=[[0.0], [0.0]])
    shift = affine_net([[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0], tag="binfit-shift")
    net = compose(bit_extractor(L), compose(shift, stage))
    meta = {
        "construction_tag": f"binary_fitter(W={W},L={L})",
        "claimed_width": 8 * W + 4,
        "claimed_depth": 4 * L,
        "claimed_lipschitz": 2.0 * 2.0 ** (L * L) + L * L,
    }
    return ReluNet(net.layers, 1, metadata=meta)


def _plane_bits(xi: np.ndarray, J: int) -> np.ndarray:
    """(n, J) matrix of truncated binary digits of each xi_i."""
    out = np.zeros((xi.shape[0], J), dtype=float)
    for i, v in enumerate(xi):
        out[i] = truncated_bits(float(v), J)
    return out


def value_fitter(xi, W: int, L: int, s: int, layout: str = "grouped") -> ReluNet:
    """Net with |phi(i) - xi_i| <= (WL)^(-2s) on i = 0..W^2 L^2 - 1 and range [0,1].

    Budget: width 8 s (2W+1) ceil(log2 2W) + 2, depth 4 L ceil(log2 2L) + 1.
    ``layout`` picks between the grouped parallel of per-digit binary fitters
    and a packed variant that merges all digit planes into one vector-valued
    interpolation (much narrower; used inside deep assemblies).
    """
    xi = np.asarray(xi, dtype=float)
    if W < 6 or not 2 <= L <= _MAX_L or s < 1:
        raise GuardError(f"need W >= 6, 2 <= L <= {_MAX_L}, s >= 1")
    n = W * W * L * L
    if xi.shape != (n,):
        raise ValueError(f"xi must have length W^2 L^2 = {n}")
    if np.any(xi < 0) or np.any(xi > 1):
        raise ValueError("xi entries must lie in [0, 1]")
    J = int(np.ceil(2 * s * np.log2(W * L)))
    width_budget = 8 * s * (2 * W + 1) * int(np.ceil(np.log2(2 * W))) + 2
    depth_budget = 4 * L * int(np.ceil(np.log2(2 * L))) + 1
    bits = _plane_bits(xi, J)
    meta = {
        "construction_tag": f"value_fitter(W={W},L={L},s={s})",
        "claimed_width": width_budget,
        "claimed_depth": depth_budget,
        "claimed_lipschitz": 4.0 * 2.0 ** (L * L) + 2.0 * L * L,
    }
    if layout == "grouped":
        net = _value_fitter_grouped(bits, W, L, J, width_budget, depth_budget)
    elif layout == "packed":
        net = _value_fitter_packed(bits, W, L, J, width_budget, depth_budget)
    else:
        raise ValueError("layout must be 'grouped' or 'packed'")
    return ReluNet(net.layers, 1, metadata=meta)


def _value_fitter_grouped(bits, W, L, J, width_budget, depth_budget):
    """Paper layout: groups of per-digit binary fitters run in sequence.

    Two extra channels per hidden layer carry the input and the running sum.
    """
    G = int(np.ceil(np.log2(2 * L)))
    per = int(np.ceil(J / G))
    if per * (8 * W + 4) + 2 > width_budget:
        raise CapacityError(
            f"grouped layout needs width {per * (8 * W + 4) + 2} > budget {width_budget}"
        )
    fitters = [binary_fitter(bits[:, j], W, L) for j in range(J)]
    state = None  # net mapping x -> (x_pos, running_sum)
    for g in range(G):
        members = fitters[g * per : (g + 1) * per]
        if not members:
            break
        if state is None:
            sel = affine_net([[1.0]], [0.0], tag="x")
            comps = [compose(f, sel) for f in members]
            keep = _relu_passthrough(1)
            stage = parallel(comps + [keep], lower_bounds=[[0.0]] * len(comps) + [[0.0]])
            rows = np.zeros((2, len(members) + 1))
            rows[0, len(members)] = 1.0
            for j in range(len(members)):
                rows[1, j] = 2.0 ** (-(g * per + j + 1))
            state = compose(affine_net(rows, [0.0, 0.0], tag="acc"), stage)
        else:
            sel = affine_net([[1.0, 0.0]], [0.0], tag="x")
            comps = [compose(f, sel) for f in members]
            keep = compose(_relu_passthrough(2), affine_net(np.eye(2), [0.0, 0.0], tag="keep"))
            stage = parallel(comps + [keep], lower_bounds=[[0.0]] * len(comps) + [[0.0, 0.0]])
            rows = np.zeros((2, len(members) + 2))
            rows[0, len(members)] = 1.0
            rows[1, len(members) + 1] = 1.0
            for j in range(len(members)):
                rows[1, j] = 2.0 ** (-(g * per + j + 1))
            state = compose(affine_net(rows, [0.0, 0.0], tag="acc"), compose(stage, state))
    out = compose(affine_net([[0.0, 1.0]], [0.0], tag="sum"), state)
    return clip_to_box(out, [0.0], [1.0])


def _value_fitter_packed(bits, W, L, J, width_budget, depth_budget):
    """Merged layout: all digit planes in one vector-valued interpolation,
    then J parallel extractors."""
    n, _ = bits.shape
    M = W * W * L
    Y = np.zeros((M + 1, J + 1))
    for j in range(J):
        Y[:, j] = _packed_values(bits[:, j], M, L)[: M + 1]
    # last output column: the within-pack index ramp
    xs = None
    cols = []
    for j in range(J + 1):
        if j < J:
            xsj, ysj = _fitter_knots(M, L, Y[:, j])
        else:
            xsj, ysj = _fitter_knots(M, L, np.zeros(M + 1))
            ysj = np.where(np.isin(xsj, np.arange(1, M + 1) * L - 1.0), float(L - 1), 0.0)
        xs = xsj
        cols.append(ysj)
    ys = np.stack(cols, axis=1)
    depth_A = depth_budget - 2 * L - 1
    stage_a = None
    for width_A in (32, 48, 64, 96, 128, 192, 256, 384, 512, width_budget):
        if width_A > width_budget:
            width_A = width_budget
        try:
            stage_a = build_pwl_net(xs, ys, width=width_A, depth=depth_A, tag="packfit-interp")
            break
        except CapacityError:
            continue
    if stage_a is None:
        raise CapacityError("packed layout: interpolation stage does not fit")
    ext = bit_extractor(L)
    comps = []
    for j in range(J):
        sel = np.zeros((2, J + 1))
        sel[0, j] = 1.0
        sel[1, J] = 1.0
        comps.append(compose(ext, affine_net(sel, [0.0, 1.0], tag=f"sel{j}")))
    stage_b = parallel(comps)
    rows = np.array([[2.0 ** (-(j + 1)) for j in range(J)]])
    out = compose(affine_net(rows, [0.0], tag="sum"), compose(stage_b, stage_a))
    return clip_to_box(out, [0.0], [1.0])


def _relu_passthrough(dim: int) -> ReluNet:
    """Depth-1 identity on nonnegative inputs: one sigma channel per coordinate."""
    return ReluNet(
        [AffineLayer(np.eye(dim), np.zeros(dim)), AffineLayer(np.eye(dim), np.zeros(dim))],
        dim,
        metadata={"construction_tag": "pass"},
    )
