"""Full smooth-function approximator: discretize, fit Taylor coefficients,
multiply by monomials, and extend from the plateau set by median filtering.

The construction needs exact partial derivatives of the target up to order s
at the grid anchors; targets therefore carry a derivative oracle, and the
built-in targets below supply analytic ones.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bits import value_fitter
from .errors import CapacityError, GuardError
from .interp import discretizer, discretizer_resolution
from .netcore import (
    AffineLayer,
    ReluNet,
    affine_net,
    clip_to_box,
    compose,
    identity_net,
    net_dims,
    parallel,
)
from .poly import MultiIndex, monomial_net, product_net

__all__ = [
    "HolderTarget",
    "HolderBudget",
    "HolderArtifacts",
    "mid_net",
    "holder_approximator",
    "build_holder",
    "taylor_local_error",
    "builtin_targets",
]


@dataclass(frozen=True)
class HolderTarget:
    """A function on [0,1]^d with smoothness index beta and derivative oracle.

    ``deriv(alpha, X)`` must return the partial derivative indexed by the
    tuple alpha at the rows of X; ``deriv((0,...,0), X)`` is the function
    itself.  Membership in the unit smoothness ball is the caller's claim
    (``norm_certificate``); scale_factor records any normalization applied.
    """

    beta: float
    dim: int
    f: callable
    deriv: callable
    name: str = ""
    norm_certificate: bool = True
    scale_factor: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def s(self) -> int:
        b = self.beta
        return int(math.ceil(b)) - 1

    @property
    def r(self) -> float:
        return self.beta - self.s


def _smoothness_split(beta: float):
    s = int(math.ceil(beta)) - 1
    return s, beta - s


@dataclass(frozen=True)
class HolderBudget:
    """Width/depth/error/Lipschitz budget for a (W, L, beta, d) choice."""

    W: int
    L: int
    beta: float
    dim: int
    K: int = field(init=False)
    delta: float = field(init=False)
    claimed_error: float = field(init=False)
    claimed_lipschitz: float = field(init=False)
    claimed_width: int = field(init=False)
    claimed_depth: int = field(init=False)

    def __post_init__(self):
        for name, value in self._derived().items():
            object.__setattr__(self, name, value)

    def _derived(self):
        W, L, beta, d = self.W, self.L, self.beta, self.dim
        s, _ = _smoothness_split(beta)
        K = discretizer_resolution(W, L, d)
        delta = 1.0 / (3.0 * K ** max(beta, 1.0))
        err = 6.0 * (s + 1) ** 2 * d ** max(s + beta / 2.0, 1.0) * float(K) ** (-beta)
        lip = (
            (s + 1)
            * d ** (s + 0.5)
            * L
            * (W * L) ** (max(0.0, 4.0 * beta - 4.0) / d)
            * (1260.0 * W * W * L * L * 2.0 ** (L * L) + 19.0 * s * 7.0**s)
        )
        width = 49 * (s + 1) ** 2 * 3**d * d ** (s + 1) * W * int(np.ceil(np.log2(W)))
        depth = 15 * (s + 1) ** 2 * L * int(np.ceil(np.log2(L))) + 2 * d
        return {
            "K": K,
            "delta": delta,
            "claimed_error": err,
            "claimed_lipschitz": lip,
            "claimed_width": width,
            "claimed_depth": depth,
        }

    @property
    def s(self) -> int:
        return _smoothness_split(self.beta)[0]

    def validate(self) -> bool:
        """Recompute every derived field and compare (exact equality)."""
        return all(getattr(self, k) == v for k, v in self._derived().items())


def mid_net() -> ReluNet:
    """Exact middle value of three inputs; width 10 <= 14, depth 2."""
    # layer 1: pair max/min parts for (t1, t2), the third input split, and
    # the full sum split
    W1 = np.array(
        [
            [1.0, 1.0, 0.0],
            [-1.0, -1.0, 0.0],
            [1.0, -1.0, 0.0],
            [-1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [1.0, 1.0, 1.0],
            [-1.0, -1.0, -1.0],
        ]
    )
    b1 = np.zeros(8)
    # m12 = max(t1,t2) = (a - b + c + d)/2, n12 = min(t1,t2) = (a - b - c - d)/2
    m12 = np.array([0.5, -0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0])
    n12 = np.array([0.5, -0.5, -0.5, -0.5, 0.0, 0.0, 0.0, 0.0])
    t3 = np.array([0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0])
    rows = [
        m12 + t3,      # sigma(m12 + t3)
        -(m12 + t3),   # sigma(-m12 - t3)
        m12 - t3,      # sigma(m12 - t3)
        t3 - m12,      # sigma(t3 - m12)
        n12 + t3,
        -(n12 + t3),
        n12 - t3,
        t3 - n12,
        np.array([0.0] * 6 + [1.0, 0.0]),   # passthrough sigma(sum)
        np.array([0.0] * 7 + [1.0]),        # passthrough sigma(-sum)
    ]
    W2 = np.stack(rows)
    b2 = np.zeros(10)
    # mid = sum - max(m12,t3) - min(n12,t3)
    #     = (g - h) - (M1 - M2 + M3 + M4)/2 - (N1 - N2 - N3 - N4)/2
    Wout = np.array([[-0.5, 0.5, -0.5, -0.5, -0.5, 0.5, 0.5, 0.5, 1.0, -1.0]])
    layers = [AffineLayer(W1, b1), AffineLayer(W2, b2), AffineLayer(Wout, np.zeros(1))]
    meta = {
        "construction_tag": "mid",
        "claimed_width": 14,
        "claimed_depth": 2,
        "claimed_lipschitz": "none",
    }
    return ReluNet(layers, input_dim=3, metadata=meta)


def taylor_local_error(target: HolderTarget, x, x0) -> float:
    """|h(x) - Taylor_s(h, x0)(x)| -- diagnostic for localizing failures."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    s = target.s
    d = target.dim
    approx = 0.0
    for alpha in _multi_indices(d, s):
        mi = MultiIndex(alpha)
        coef = float(target.deriv(alpha, x0)[0]) / mi.factorial()
        approx += coef * float(np.prod((x - x0)[0] ** np.asarray(alpha)))
    return abs(float(target.f(x)[0]) - approx)


def _multi_indices(d, s):
    """All alpha with |alpha| <= s, by total order then lexicographically."""
    out = []
    for order in range(s + 1):
        combos = sorted(
            {a for a in itertools.product(range(order + 1), repeat=d) if sum(a) == order},
            reverse=True,
        )
        out.extend(sorted(combos))
    return out


@dataclass(frozen=True)
class HolderArtifacts:
    """The assembled approximator plus the internals the tests probe."""

    net: ReluNet
    budget: HolderBudget
    index_net: ReluNet          # x -> flattened cell index i_theta
    plateau_net: ReluNet        # phi_0, accurate on the plateau set
    levels: tuple               # phi_0 .. phi_d of the median extension
    xi: dict                    # alpha -> fitted coefficient vector


def _grid_anchor(i, K, d):
    theta = np.empty(d)
    for j in range(d):
        theta[j] = (i // K**j) % K
    return theta / K


def build_holder(target: HolderTarget, budget: HolderBudget) -> HolderArtifacts:
    """Assemble the plateau approximator and its median extension."""
    W, L, d, beta = budget.W, budget.L, budget.dim, budget.beta
    if target.dim != d or target.beta != beta:
        raise ValueError("target and budget disagree on (beta, d)")
    s = budget.s
    if W < 6 or L < 2:
        raise GuardError("need W >= 6 and L >= 2")
    if d > 3 or s > 2:
        raise GuardError("desk-scale guard: d <= 3 and s <= 2")
    K = budget.K
    if K**d > W * W * L * L:
        raise CapacityError(
            f"K^d = {K**d} exceeds the coefficient-fitter capacity W^2 L^2 = {W * W * L * L}"
        )
    delta = budget.delta

    # Step 1: coordinate-wise discretizer and the cell-index map
    disc = discretizer(W, L, d, delta)
    psi_parts = [
        compose(disc, affine_net(np.eye(d)[j : j + 1], [0.0], tag=f"x{j}")) for j in range(d)
    ]
    clipper = clip_to_box(identity_net(d), np.zeros(d), np.ones(d))
    stage0 = parallel(psi_parts + [clipper], lower_bounds=[[0.0]] * d + [[0.0] * d])
    # outputs: (psi_1..psi_d, c_1..c_d) -> state (v = c - psi, i, acc = 0)
    J = np.zeros((d + 2, 2 * d))
    for j in range(d):
        J[j, d + j] = 1.0
        J[j, j] = -1.0
        J[d, j] = float(K) ** (j + 1)  # psi_j = theta_j / K, so sum is i_theta
    state = compose(affine_net(J, np.zeros(d + 2), tag="state0"), stage0)
    index_net = compose(affine_net(np.eye(d + 2)[d : d + 1], [0.0], tag="i"), state)

    # Step 2 + 3: per-alpha coefficient fitters and monomial products
    n_fit = W * W * L * L
    anchors = np.stack([_grid_anchor(i, K, d) for i in range(K**d)])
    xi_store = {}
    acc_terms = 0
    Lp = 2 * (s + 1) * L
    for alpha in _multi_indices(d, s):
        dvals = np.asarray(target.deriv(alpha, anchors), dtype=float)
        if np.any(np.abs(dvals) > 1.0 + 1e-9):
            warnings.warn(
                f"target {target.name!r}: |d^{alpha} h| exceeds 1 at grid anchors; "
                "coefficients are clipped (check the smoothness certificate)"
            )
        xi = np.full(n_fit, 0.5)
        xi[: K**d] = np.clip((dvals + 1.0) / 2.0, 0.0, 1.0)
        xi_store[alpha] = xi
        fit = value_fitter(xi, W, L, s + 1, layout="packed")
        k = sum(alpha)
        lo_acc = -float(acc_terms) * 1.01 - 1.0
        sel_i = affine_net(np.eye(d + 2)[d : d + 1], [0.0], tag="sel-i")
        keep = _state_passthrough(d, lo_acc)
        if k == 0:
            stage = parallel([compose(fit, sel_i), keep], lower_bounds=[[0.0], None])
            rows = np.zeros((d + 2, 1 + d + 2))
            rows[: d + 2, 1:] = np.eye(d + 2)
            rows[d + 1, 0] = 2.0  # acc += 2 fit - 1
            state = compose(affine_net(rows, _acc_bias(d, -1.0), tag="acc0"), compose(stage, state))
        else:
            mono = monomial_net(MultiIndex(alpha), W, Lp)
            sel_v = affine_net(np.hstack([np.eye(d), np.zeros((d, 2))]), np.zeros(d), tag="sel-v")
            stage_a = parallel(
                [compose(fit, sel_i), compose(mono, sel_v), keep],
                lower_bounds=[[0.0], [-1.0], None],
            )
            # product inputs: ((2 fit - 1)/alpha!, mono)
            fac = MultiIndex(alpha).factorial()
            pin = np.zeros((2, 2 + d + 2))
            pin[0, 0] = 2.0 / fac
            pin[1, 1] = 1.0
            pbias = np.array([-1.0 / fac, 0.0])
            prod = compose(product_net(W, Lp), affine_net(pin, pbias, tag="pair"))
            keep2 = compose(
                _state_passthrough(d, lo_acc),
                affine_net(np.hstack([np.zeros((d + 2, 2)), np.eye(d + 2)]), np.zeros(d + 2), tag="keep"),
            )
            stage_b = parallel([prod, keep2], lower_bounds=[[-1.5], None])
            rows = np.zeros((d + 2, 1 + d + 2))
            rows[: d + 2, 1:] = np.eye(d + 2)
            rows[d + 1, 0] = 1.0  # acc += product term
            state = compose(
                affine_net(rows, np.zeros(d + 2), tag="acc"),
                compose(stage_b, compose(stage_a, state)),
            )
        acc_terms += 1

    phi0 = compose(affine_net(np.eye(d + 2)[d + 1 : d + 2], [0.0], tag="acc-out"), state)
    phi0 = clip_to_box(phi0, [-1.0], [1.0])

    # Step 4: median extension, one coordinate at a time
    levels = [phi0]
    mid = mid_net()
    for axis in range(d):
        prev = levels[-1]
        shifts = []
        for off in (-delta, 0.0, delta):
            bias = np.zeros(d)
            bias[axis] = off
            shifts.append(compose(prev, affine_net(np.eye(d), bias, tag=f"shift{off:+.0e}")))
        levels.append(compose(mid, parallel(shifts)))
    net = levels[-1]

    meta = {
        "construction_tag": f"holder(W={W},L={L},beta={beta},d={d},target={target.name})",
        "claimed_width": budget.claimed_width,
        "claimed_depth": budget.claimed_depth,
        "claimed_lipschitz": budget.claimed_lipschitz,
    }
    net = ReluNet(net.layers, d, metadata=meta)
    return HolderArtifacts(
        net=net,
        budget=budget,
        index_net=index_net,
        plateau_net=phi0,
        levels=tuple(levels),
        xi=xi_store,
    )


def holder_approximator(target: HolderTarget, budget: HolderBudget) -> ReluNet:
    return build_holder(target, budget).net


def _acc_bias(d, v0):
    b = np.zeros(d + 2)
    b[d + 1] = v0
    return b


def _state_passthrough(d, acc_lower) -> ReluNet:
    """Identity on the state (v in [-1,1]^d, i >= 0, acc >= acc_lower)."""
    dim = d + 2
    lo = np.array([-1.0] * d + [0.0, acc_lower])
    return ReluNet(
        [AffineLayer(np.eye(dim), -lo), AffineLayer(np.eye(dim), lo)],
        dim,
        metadata={"construction_tag": "state-pass"},
    )


# ---------------------------------------------------------------------------
# built-in certified targets

def _linear_target(d, beta):
    w = np.full(d, 1.0 / d)

    def f(X):
        return np.asarray(X) @ w

    def deriv(alpha, X):
        X = np.asarray(X)
        k = sum(alpha)
        if k == 0:
            return f(X)
        if k == 1:
            j = list(alpha).index(1)
            return np.full(X.shape[0], w[j])
        return np.zeros(X.shape[0])

    return HolderTarget(beta=beta, dim=d, f=f, deriv=deriv, name="linear-mean")


def _quadratic_target(d, beta):
    c = 0.5 / math.sqrt(d)

    def f(X):
        X = np.asarray(X)
        return c * np.sum((X - 0.5) ** 2, axis=1)

    def deriv(alpha, X):
        X = np.asarray(X)
        k = sum(alpha)
        if k == 0:
            return f(X)
        if k == 1:
            j = list(alpha).index(1)
            return 2.0 * c * (X[:, j] - 0.5)
        if k == 2 and max(alpha) == 2:
            return np.full(X.shape[0], 2.0 * c)
        return np.zeros(X.shape[0])

    return HolderTarget(beta=beta, dim=d, f=f, deriv=deriv, name="quadratic-bowl")


def _sine_target(d, beta):
    om = 2.0
    c = 0.9 * min(0.5, 1.0 / (om * math.sqrt(d)), 1.0 / (om * om * math.sqrt(d)))

    def f(X):
        X = np.asarray(X)
        return c * np.sin(om * X.sum(axis=1))

    def deriv(alpha, X):
        X = np.asarray(X)
        k = sum(alpha)
        phase = om * X.sum(axis=1)
        if k % 4 == 0:
            base = np.sin(phase)
        elif k % 4 == 1:
            base = np.cos(phase)
        elif k % 4 == 2:
            base = -np.sin(phase)
        else:
            base = -np.cos(phase)
        return c * om**k * base

    return HolderTarget(beta=beta, dim=d, f=f, deriv=deriv, name="sine-ridge")


def _bump_target(d, beta):
    # smooth bump supported strictly inside the cube; scale fixed by a fine
    # numeric sweep of the derivative magnitudes (0.9 safety)
    rho = 0.9

    def tfun(X):
        X = np.asarray(X)
        return np.sum((2.0 * X - 1.0) ** 2, axis=1) / rho**2

    def g(t):
        out = np.zeros_like(t)
        inside = t < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside]))
        return out

    def gp(t):
        out = np.zeros_like(t)
        inside = t < 1.0
        out[inside] = -np.exp(1.0 - 1.0 / (1.0 - t[inside])) / (1.0 - t[inside]) ** 2
        return out

    def gpp(t):
        out = np.zeros_like(t)
        inside = t < 1.0
        e = np.exp(1.0 - 1.0 / (1.0 - t[inside]))
        out[inside] = e / (1.0 - t[inside]) ** 4 - 2.0 * e / (1.0 - t[inside]) ** 3
        return out

    def raw_deriv(alpha, X):
        X = np.asarray(X)
        t = tfun(X)
        k = sum(alpha)
        if k == 0:
            return g(t)
        tj = lambda j: (8.0 * X[:, j] - 4.0) / rho**2
        if k == 1:
            j = list(alpha).index(1)
            return gp(t) * tj(j)
        idx = [j for j, a in enumerate(alpha) for _ in range(a)]
        j1, j2 = idx
        out = gpp(t) * tj(j1) * tj(j2)
        if j1 == j2:
            out = out + gp(t) * (8.0 / rho**2)
        return out

    probe = np.random.default_rng(7).uniform(0, 1, (20000, d))
    mags = [np.max(np.abs(raw_deriv(a, probe))) for a in _multi_indices(d, 2)]
    c = 0.9 / max(max(mags), 1.0)

    def f(X):
        return c * g(tfun(X))

    def deriv(alpha, X):
        return c * raw_deriv(alpha, X)

    return HolderTarget(beta=beta, dim=d, f=f, deriv=deriv, name="smooth-bump")


def builtin_targets(d: int, beta: float):
    """Certified members of the unit smoothness ball with analytic derivatives."""
    return [
        _linear_target(d, beta),
        _quadratic_target(d, beta),
        _sine_target(d, beta),
        _bump_target(d, beta),
    ]
