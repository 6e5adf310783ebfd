"""Sawtooth-based square, product, and monomial approximator networks.

The square approximator interpolates x^2 at the dyadic grid j/2^(nL) by
subtracting scaled sawtooth waves from the identity; products and monomials
are assembled from it through the polarization identity and iterated,
clipped pairwise products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GuardError
from .netcore import AffineLayer, ReluNet, affine_net, clip_to_box, compose, parallel

__all__ = ["MultiIndex", "sawtooth_order", "square_net", "product_net", "monomial_net"]

_MAX_NL = 40  # dyadic-knot density guard: knots at spacing 2^-(nL)


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector of a monomial x_1^a_1 ... x_d^a_d."""

    alpha: tuple

    def __post_init__(self):
        if not all(isinstance(a, (int, np.integer)) and a >= 0 for a in self.alpha):
            raise ValueError("alpha entries must be nonnegative integers")
        object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))

    @property
    def order(self) -> int:
        return sum(self.alpha)

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def factorial(self) -> float:
        out = 1.0
        for a in self.alpha:
            for k in range(2, a + 1):
                out *= k
        return out


def sawtooth_order(W: int) -> int:
    """The unique n with (n-1) 2^(n-1) + 1 <= W <= n 2^n."""
    for n in range(1, 41):
        if (n - 1) * 2 ** (n - 1) + 1 <= W <= n * 2**n:
            return n
    raise GuardError(f"no sawtooth order n in 1..40 matches W = {W}")


def square_net(W: int, L: int) -> ReluNet:
    """Net within (3W, L) with |phi(x) - x^2| <= W^-L / 4 on [0, 1].

    Exact at the dyadic knots j / 2^(nL).  Each hidden layer advances the
    sawtooth recursion by n steps: its neurons are sigma(t - k/2^n) for the
    current tooth coordinate t, plus one channel for the running sum.
    """
    if W < 1 or L < 1:
        raise GuardError("need W >= 1 and L >= 1")
    n = sawtooth_order(W)
    if n * L > _MAX_NL:
        raise GuardError(f"nL = {n * L} exceeds the dyadic density guard {_MAX_NL}")
    p = 2**n
    knots = np.arange(p) / p

    # sawtooth T_i over the layer's tooth coordinate, as coefficients on
    # sigma(t - k/2^n): slope after knot k/2^i is (-1)^k 2^i
    saw_coef = np.zeros((n + 1, p))
    for i in range(1, n + 1):
        step = p // 2**i
        saw_coef[i, 0] = 2.0**i
        for k in range(1, 2**i):
            saw_coef[i, k * step] = (-1) ** k * 2.0 ** (i + 1)

    layers = []
    # layer 1: sigma(x - k/2^n); no accumulator yet
    W1 = np.ones((p, 1))
    b1 = -knots.copy()
    layers.append(AffineLayer(W1, b1))
    for blockidx in range(1, L):
        # rows: sigma(t' - k/2^n) for t' = T_n(t), then the accumulator
        tn_row = saw_coef[n]
        Wk = np.zeros((p + 1, p if blockidx == 1 else p + 1))
        bk = np.zeros(p + 1)
        src = slice(0, p)
        for k in range(p):
            Wk[k, src] = tn_row
            bk[k] = -knots[k]
        # accumulator: previous acc (or x) minus this block's sawtooth terms
        if blockidx == 1:
            Wk[p, 0] = 1.0  # sigma(x - 0) equals x on [0, 1]
        else:
            Wk[p, p] = 1.0
        for i in range(1, n + 1):
            Wk[p, src] -= saw_coef[i] / 4.0 ** ((blockidx - 1) * n + i)
        layers.append(AffineLayer(Wk, bk))
    # output affine: acc - last block's sawtooth terms
    cols = p if L == 1 else p + 1
    Wout = np.zeros((1, cols))
    bout = np.zeros(1)
    if L == 1:
        Wout[0, 0] = 1.0
    else:
        Wout[0, p] = 1.0
    for i in range(1, n + 1):
        Wout[0, :p] -= saw_coef[i] / 4.0 ** ((L - 1) * n + i)
    layers.append(AffineLayer(Wout, bout))
    meta = {
        "construction_tag": f"square_net(W={W},L={L})",
        "claimed_width": 3 * W,
        "claimed_depth": L,
        "claimed_lipschitz": 2.0,
    }
    return ReluNet(layers, input_dim=1, metadata=meta)


def product_net(W: int, L: int) -> ReluNet:
    """Net within (9W+1, L) with |phi(x,y) - xy| <= 6 W^-L on [-1,1]^2.

    Uses xy = 2((x+y)/2)^2 - 2(x/2)^2 - 2(y/2)^2 after shifting [-1,1] to
    [0,1]; the modulus |phi(p) - phi(q)| <= 7|dx| + 7|dy| holds there too.
    """
    sq = square_net(W, L)
    # inputs shifted to x0 = (x+1)/2, y0 = (y+1)/2, then halved combinations
    sel = [
        affine_net([[0.25, 0.25]], [0.5], tag="sq-xy"),   # (x0+y0)/2 = (x+y+2)/4
        affine_net([[0.25, 0.0]], [0.25], tag="sq-x"),    # x0/2 = (x+1)/4
        affine_net([[0.0, 0.25]], [0.25], tag="sq-y"),    # y0/2 = (y+1)/4
    ]
    comps = [compose(sq, s) for s in sel]
    relu_sum = ReluNet(
        [AffineLayer(np.array([[1.0, 1.0]]), np.array([2.0])), AffineLayer(np.eye(1), np.zeros(1))],
        2,
        metadata={"construction_tag": "relu(x+y+2)"},
    )
    stage = parallel(comps + [relu_sum], lower_bounds=[[0.0]] * 3 + [[0.0]])
    # phi = 4 * phi0 - sigma(x+y+2) + 1, phi0 = 2(q1 - q2 - q3)
    out = affine_net([[8.0, -8.0, -8.0, -1.0]], [1.0], tag="prod-out")
    net = compose(out, stage)
    meta = {
        "construction_tag": f"product_net(W={W},L={L})",
        "claimed_width": 9 * W + 1,
        "claimed_depth": L,
        "claimed_lipschitz": 7.0 * np.sqrt(2.0),
    }
    return ReluNet(net.layers, 2, metadata=meta)


def monomial_net(alpha: MultiIndex, W: int, L: int) -> ReluNet:
    """Net within (9W+k-1, (k-1)(L+1)) approximating x^alpha on [-1,1]^d.

    k = |alpha|: error <= 6(k-1) W^-L, range inside [-1,1], modulus
    7^(k-1) max(alpha) in l1.  k = 1 is an exact projection; k = 0 the
    constant 1.
    """
    if not isinstance(alpha, MultiIndex):
        alpha = MultiIndex(tuple(alpha))
    d = alpha.dim
    k = alpha.order
    if k == 0:
        return affine_net(np.zeros((1, d)), [1.0], tag="monomial-const")
    if k == 1:
        row = np.zeros((1, d))
        row[0, list(alpha.alpha).index(1)] = 1.0
        return affine_net(row, [0.0], tag="monomial-proj", claimed_lipschitz=1.0)
    if k > 6:
        raise GuardError("monomial order k is guarded to <= 6")
    # flatten: z repeats coordinate j exactly alpha_j times
    flat = np.zeros((k, d))
    r = 0
    for j, a in enumerate(alpha.alpha):
        for _ in range(a):
            flat[r, j] = 1.0
            r += 1
    prod = clip_to_box(product_net(W, L), [-1.0], [1.0])
    net = affine_net(flat[:2] if k == 2 else flat, np.zeros(k), tag="flatten")
    state = compose(prod, affine_net(np.eye(2, k), np.zeros(2), tag="take2"))
    state = compose(state, net)  # psi_2(z1, z2)
    carried = k - 2
    # carry remaining z's beside the running product, multiply them in one by one
    if carried:
        carry_rows = np.hstack([np.zeros((carried, 2)), np.eye(carried)])
        first = parallel(
            [
                compose(prod, affine_net(np.eye(2, k), np.zeros(2), tag="take2")),
                compose(_passthrough_shifted(carried), affine_net(carry_rows, np.zeros(carried), tag="carry")),
            ],
        )
        state = compose(first, net)
        for i in range(carried):
            remaining = carried - i - 1
            take = np.zeros((2, 1 + carried - i))
            take[0, 0] = 1.0
            take[1, 1] = 1.0
            comps = [compose(prod, affine_net(take, np.zeros(2), tag="pair"))]
            if remaining:
                rows = np.hstack([np.zeros((remaining, 2)), np.eye(remaining)])
                comps.append(
                    compose(_passthrough_shifted(remaining), affine_net(rows, np.zeros(remaining), tag="carry"))
                )
            state = compose(parallel(comps) if remaining else comps[0], state)
    meta = {
        "construction_tag": f"monomial_net(alpha={alpha.alpha},W={W},L={L})",
        "claimed_width": 9 * W + k - 1,
        "claimed_depth": (k - 1) * (L + 1),
        "claimed_lipschitz": 7.0 ** (k - 1) * max(alpha.alpha) * np.sqrt(d),
    }
    return ReluNet(state.layers, d, metadata=meta)


def _passthrough_shifted(dim: int) -> ReluNet:
    """Depth-1 identity on [-1, 1]^dim: sigma(t + 1) - 1 per coordinate."""
    return ReluNet(
        [AffineLayer(np.eye(dim), np.ones(dim)), AffineLayer(np.eye(dim), -np.ones(dim))],
        dim,
        metadata={"construction_tag": "pass[-1,1]"},
    )
