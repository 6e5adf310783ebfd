"""Exact ReLU realization of continuous piecewise-linear functions.

Builds a network computing, for samples (x_i, y_i) with strictly increasing
x_i, the unique interpolant that is linear between consecutive samples and
constant outside [x_0, x_{m-1}] — exactly, on all of R.

Layer scheme.  Channel u = sigma(x - x_0) rides through every hidden layer
and doubles as the first knot.  Every other knot is realized either as a
"divider" neuron sigma(x - d) (one knot per neuron) or as a zero crossing of
a "crossing" neuron sigma(g_j(x)), where g_j is an affine combination of the
previous layer's dividers.  A crossing places a fresh slope change anywhere
inside a divider gap, which pushes the knot capacity of a width-W layer pair
to ~W^2/4 instead of ~W.  Per-output accumulator channels carry the partial
sum; they are kept nonnegative (so one ReLU channel passes them through
exactly) by adding a computed multiple of u that the output layer removes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .netcore import AffineLayer, ReluNet

__all__ = ["eval_pwl_arrays", "build_pwl_net"]


def eval_pwl_arrays(xs, ys, t):
    """Reference interpolant: linear between samples, constant outside.

    xs: (m,) strictly increasing; ys: (m, d) or (m,); t: scalar or (n,).
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    squeeze_dim = ys.ndim == 1
    if squeeze_dim:
        ys = ys[:, None]
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if xs.shape[0] == 1:
        out = np.tile(ys[0], (t.shape[0], 1))
    else:
        tc = np.clip(t, xs[0], xs[-1])
        idx = np.clip(np.searchsorted(xs, tc, side="right") - 1, 0, xs.shape[0] - 2)
        x0, x1 = xs[idx], xs[idx + 1]
        w = (tc - x0) / (x1 - x0)
        out = ys[idx] + w[:, None] * (ys[idx + 1] - ys[idx])
    if squeeze_dim:
        out = out[:, 0]
    return out[0] if scalar else out


@dataclass
class _Neuron:
    dim: int
    sign: float
    last_gap: int = -10
    on: bool = False
    events: list = field(default_factory=list)  # (gap index, position, |kink|)


class _Block:
    def __init__(self):
        self.dividers = []    # x positions
        self.targets = []     # per-divider target kink vector (zeros if synthetic)
        self.neurons = []


def _plan_blocks(positions, kinks, x0, width, depth):
    """Greedily assign breakpoints to divider / crossing slots.

    A block is one divider layer optionally followed by one crossing layer.
    Raises CapacityError when knots remain with no hidden layers left.
    """
    nk, dv = kinks.shape
    pos = 0
    blocks = []
    layers_left = depth
    first_layer = True
    last_pos = x0
    while pos < nk:
        if layers_left <= 0:
            raise CapacityError(
                f"piecewise-linear budget exhausted: {nk - pos} knot(s) left, "
                f"0 of {depth} hidden layers remaining at width {width}"
            )
        cap_div = (width - 1) if first_layer else (width - 1 - dv)
        cap_x = (width - 1 - dv) if layers_left >= 2 else 0
        if cap_div < 1:
            raise CapacityError(
                f"width {width} cannot host {dv}-dimensional accumulators"
            )
        block = _Block()
        unused = cap_x
        claimed = []
        gap_open = False
        reserve = 2 if cap_x > 0 else 0
        progressed = False

        while pos < nk:
            k = pos
            placed = False
            if gap_open and cap_x > 0:
                gi = len(block.dividers) - 1
                dims = [v for v in range(dv) if kinks[k, v] != 0.0]
                chosen = []
                fresh = 0
                feasible = bool(dims)
                for v in dims:
                    s = 1.0 if kinks[k, v] > 0 else -1.0
                    cand = None
                    for nrn in claimed:
                        if (
                            nrn.dim == v
                            and nrn.sign == s
                            and nrn.last_gap <= gi - 2
                            and all(nrn is not c for c in chosen)
                        ):
                            cand = nrn
                            break
                    if cand is None:
                        if unused - fresh > 0:
                            cand = _Neuron(dim=v, sign=s)
                            fresh += 1
                        else:
                            feasible = False
                            break
                    chosen.append(cand)
                if feasible and chosen:
                    for v, nrn in zip(dims, chosen):
                        if not nrn.events:
                            claimed.append(nrn)
                            unused -= 1
                        nrn.events.append((gi, positions[k], abs(kinks[k, v])))
                        nrn.last_gap = gi
                        nrn.on = not nrn.on
                    placed = True
            if not placed:
                if len(block.dividers) < cap_div - reserve:
                    block.dividers.append(positions[k])
                    block.targets.append(kinks[k].copy())
                    gap_open = cap_x > 0
                    placed = True
                else:
                    break
            if placed:
                last_pos = positions[k]
                pos += 1
                progressed = True

        if not progressed:
            raise CapacityError(
                f"width {width} too small to place any knot (need divider slots)"
            )

        # synthetic dividers: close the open gap and give still-on neurons a
        # straight runway to zero at the final divider
        nxt = positions[pos] if pos < nk else positions[-1] + 4.0
        syn = 0
        def syn_pos():
            return last_pos + (syn + 1) * (nxt - last_pos) / 4.0
        if any(n.events and n.events[-1][0] == len(block.dividers) - 1 for n in claimed):
            block.dividers.append(syn_pos())
            block.targets.append(np.zeros(dv))
            syn += 1
        while any(n.on and n.events[-1][0] == len(block.dividers) - 2 for n in claimed):
            block.dividers.append(syn_pos())
            block.targets.append(np.zeros(dv))
            syn += 1
        block.neurons = claimed
        blocks.append(block)
        layers_left -= 2 if claimed else 1
        first_layer = False
    return blocks


def _neuron_divider_values(nrn, D):
    """Values of g_j at the block's dividers.

    Crossing events force both endpoint values of their gap; stretches in
    between are filled linearly (sign-consistent); still-on neurons descend
    to exactly zero at the final divider.
    """
    P = len(D)
    V = np.full(P, np.nan)
    for idx, (gi, zeta, absA) in enumerate(nrn.events):
        gamma = absA if idx % 2 == 0 else -absA
        V[gi] = gamma * (D[gi] - zeta)
        V[gi + 1] = gamma * (D[gi + 1] - zeta)
    first = nrn.events[0][0]
    V[:first] = V[first]
    last_fixed = nrn.events[-1][0] + 1
    if len(nrn.events) % 2 == 1:  # still on: reach 0 at the last divider
        V[P - 1] = 0.0
        if last_fixed < P - 1:
            V[last_fixed + 1 : P - 1] = V[last_fixed] * (
                (D[P - 1] - D[last_fixed + 1 : P - 1]) / (D[P - 1] - D[last_fixed])
            )
    else:
        V[last_fixed + 1 :] = V[last_fixed]
    known = np.flatnonzero(~np.isnan(V))
    for a, b in zip(known[:-1], known[1:]):
        if b - a > 1:
            V[a + 1 : b] = V[a] + (V[b] - V[a]) * (D[a + 1 : b] - D[a]) / (D[b] - D[a])
    return V


def _sigma_profile(D, V):
    """Kink structure of sigma(g) for g piecewise linear through (D, V).

    Returns (divider_kinks (P,), crossing_kinks [(pos, slope change)]).
    The head slope is 0 and the tail keeps the final gap's slope (so the
    tail of sigma(g) is 0: g ends either negative or descending through 0).
    """
    P = len(D)
    s = (V[1:] - V[:-1]) / (D[1:] - D[:-1])
    right = np.zeros(P)  # slope of sigma(g) just right of each divider
    left = np.zeros(P)   # just left of each divider
    crossings = []
    for i in range(P - 1):
        v0, v1, si = V[i], V[i + 1], s[i]
        if v0 >= 0.0 and v1 >= 0.0:
            r, l = si, si
        elif v0 <= 0.0 and v1 <= 0.0:
            r, l = 0.0, 0.0
        elif v0 < 0.0 < v1:
            crossings.append((D[i] - v0 / si, si))
            r, l = 0.0, si
        else:  # v0 > 0 > v1
            crossings.append((D[i] - v0 / si, -si))
            r, l = si, 0.0
        right[i] = r
        left[i + 1] = l
    # tail: g continues with slope s[-1]; sigma tail is 0 in all valid states
    tail_sigma = s[-1] if V[-1] > 0.0 else 0.0
    divider_kinks = np.zeros(P)
    for i in range(P):
        r = right[i] if i < P - 1 else tail_sigma
        divider_kinks[i] = r - left[i]
    return divider_kinks, crossings


class _PrefixTracker:
    """Piecewise-linear prefix per output dim, for the accumulator tilt."""

    def __init__(self, dv, x0):
        self.kinks = [dict() for _ in range(dv)]
        self.x0 = x0
        self.dv = dv

    def add(self, v, pos, val):
        if val != 0.0:
            self.kinks[v][pos] = self.kinks[v].get(pos, 0.0) + val

    def lam(self):
        out = np.zeros(self.dv)
        for v in range(self.dv):
            if not self.kinks[v]:
                continue
            pos = np.array(sorted(self.kinks[v]))
            kk = np.array([self.kinks[v][p] for p in pos])
            slopes = np.cumsum(kk)
            vals = np.concatenate([[0.0], np.cumsum(slopes[:-1] * np.diff(pos))])
            u = pos - self.x0
            need = 0.0
            scale = float(np.max(np.abs(vals))) + 1.0
            for uu, val in zip(u, vals):
                if uu > 1e-300 and val < 0.0:
                    need = max(need, -val / uu)
            if slopes[-1] < 0.0:
                need = max(need, -slopes[-1])
            out[v] = need * (1.0 + 1e-9) + 1e-12 * scale
        return out


def build_pwl_net(xs, ys, width, depth, tag="pwl", metadata=None):
    """Explicit net computing the interpolant of (xs, ys) within the budget.

    xs: (m,) strictly increasing.  ys: (m,) or (m, d).  width/depth bound the
    hidden layers.  Raises CapacityError when the greedy plan does not fit.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    m = xs.shape[0]
    dv = ys.shape[1]
    if m == 0:
        raise ValueError("need at least one sample")
    if ys.shape[0] != m:
        raise ValueError("xs and ys length mismatch")
    if m > 1 and not np.all(np.diff(xs) > 0):
        raise ValueError("xs must be strictly increasing")
    meta = {
        "construction_tag": tag,
        "claimed_width": width,
        "claimed_depth": depth,
        "claimed_lipschitz": "none",
    }
    if metadata:
        meta.update(metadata)
    if m == 1:
        return ReluNet([AffineLayer(np.zeros((dv, 1)), ys[0].copy())], 1, metadata=meta)

    slopes = (ys[1:] - ys[:-1]) / (xs[1:] - xs[:-1])[:, None]
    kinks = np.zeros((m, dv))
    kinks[0] = slopes[0]
    kinks[1:-1] = slopes[1:] - slopes[:-1]
    kinks[-1] = -slopes[-1]

    # samples where no slope actually changes are not breakpoints
    live = np.any(kinks[1:] != 0.0, axis=1)
    positions = xs[1:][live]
    live_kinks = kinks[1:][live]
    if positions.shape[0] == 0:
        # all kinks vanish (sum of kinks is always zero), so f is constant
        return ReluNet([AffineLayer(np.zeros((dv, 1)), ys[0].copy())], 1, metadata=meta)

    blocks = _plan_blocks(positions, live_kinks, xs[0], width, depth)

    # resolve blocks into per-layer emissions:
    #   ('div', positions, coefs)  or  ('cross', (wmat, bvec), coefs)
    emissions = []
    u0 = xs[0]
    for blk in blocks:
        D = np.asarray(blk.dividers)
        P = D.shape[0]
        div_coef = np.asarray(blk.targets, dtype=float).reshape(P, dv).copy()
        cross_w, cross_b, cross_coef, cross_kinks = [], [], [], []
        for nrn in blk.neurons:
            V = _neuron_divider_values(nrn, D)
            dkinks, crossings = _sigma_profile(D, V)
            c = nrn.sign
            div_coef[:, nrn.dim] -= c * dkinks
            s = (V[1:] - V[:-1]) / (D[1:] - D[:-1])
            w = np.zeros(P)
            w[0] = s[0]
            w[1:-1] = s[1:] - s[:-1]
            # no kink at the last divider: tail keeps the final slope
            cross_w.append(w)
            cross_b.append(V[0])
            coef = np.zeros(dv)
            coef[nrn.dim] = c
            cross_coef.append(coef)
            cross_kinks.append(
                [(nrn.dim, p, c * k) for p, k in zip(D, dkinks)]
                + [(nrn.dim, p, c * k) for p, k in crossings]
            )
        div_kinks = [
            (v, p, div_coef[i, v])
            for i, p in enumerate(D)
            for v in range(dv)
            if div_coef[i, v] != 0.0
        ]
        emissions.append(("div", D, div_coef, div_kinks))
        if blk.neurons:
            emissions.append(
                (
                    "cross",
                    (np.asarray(cross_w), np.asarray(cross_b)),
                    np.asarray(cross_coef),
                    [k for ks in cross_kinks for k in ks],
                )
            )

    tracker = _PrefixTracker(dv, u0)
    layers = []
    lam_prev = np.zeros(dv)
    prev_n = 0
    prev_has_acc = False
    pend_coefs = None
    _pending_kinks = []

    for li, (kind, payload, coefs, kink_regs) in enumerate(emissions):
        n_new = len(payload) if kind == "div" else payload[0].shape[0]
        if li == 0:
            D = payload
            W = np.zeros((1 + n_new, 1))
            b = np.zeros(1 + n_new)
            W[0, 0], b[0] = 1.0, -u0
            W[1:, 0] = 1.0
            b[1:] = -D
            layers.append(AffineLayer(W, b))
        else:
            for v, p, val in _pending_kinks:
                tracker.add(v, p, val)
            lam_new = np.maximum(lam_prev, tracker.lam())
            in_cols = 1 + (dv if prev_has_acc else 0) + prev_n
            W = np.zeros((1 + dv + n_new, in_cols))
            b = np.zeros(1 + dv + n_new)
            W[0, 0] = 1.0
            for v in range(dv):
                W[1 + v, 0] = lam_new[v] - lam_prev[v]
                if prev_has_acc:
                    W[1 + v, 1 + v] = 1.0
                W[1 + v, in_cols - prev_n :] = pend_coefs[:, v]
            if kind == "div":
                # sigma(u - (D - u0)) equals sigma(x - D) for every real x
                D = payload
                W[1 + dv :, 0] = 1.0
                b[1 + dv :] = -(D - u0)
            else:
                wmat, bvec = payload
                W[1 + dv :, in_cols - prev_n :] = wmat
                b[1 + dv :] = bvec
            layers.append(AffineLayer(W, b))
            lam_prev = lam_new
            prev_has_acc = True
        prev_n = n_new
        pend_coefs = coefs
        _pending_kinks = kink_regs

    # output affine: base + u-kink - lambda + acc + last layer's coefficients
    in_cols = 1 + (dv if prev_has_acc else 0) + prev_n
    Wout = np.zeros((dv, in_cols))
    bout = ys[0].copy()
    for v in range(dv):
        Wout[v, 0] = kinks[0, v] - lam_prev[v]
        if prev_has_acc:
            Wout[v, 1 + v] = 1.0
        Wout[v, in_cols - prev_n :] = pend_coefs[:, v]
    layers.append(AffineLayer(Wout, bout))
    return ReluNet(layers, input_dim=1, metadata=meta)
