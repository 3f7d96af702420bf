"""Shared oracles for the test suite.

The finite-difference checker here is the independent gradient oracle:
it never touches the backward rules it is used to verify.
"""

from __future__ import annotations

import numpy as np

from auxkt import tensor as T


def finite_difference(fn, param, coords=None, step=1e-5):
    """Central finite differences of scalar-valued ``fn()`` wrt ``param`` entries.

    ``fn`` must re-run the forward computation from current parameter
    values each call. Returns (coords, fd_grads).
    """
    base = param.values
    flat = base.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    coords = list(coords)
    grads = np.empty(len(coords))
    for out_i, i in enumerate(coords):
        keep = flat[i]
        flat[i] = keep + step
        up = fn()
        flat[i] = keep - step
        down = fn()
        flat[i] = keep
        grads[out_i] = (up - down) / (2.0 * step)
    return coords, grads


def check_gradients(build_loss, params, rel_tol=1e-4, coords_per_param=None, rng=None, step=1e-5):
    """Run backward once, then verify each parameter against finite differences.

    ``build_loss`` takes no arguments and returns a scalar Tensor computed
    from the current parameter values. Comparison uses a relative error
    with an absolute floor so near-zero gradients do not blow up the ratio.
    """
    for p in params:
        p.zero_grad()
    with T.Graph() as g:
        loss = build_loss()
        g.backward(loss)
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.values)) for p in params}

    def forward_value():
        return float(build_loss().values)

    worst = 0.0
    for p in params:
        size = p.values.size
        if coords_per_param is None or coords_per_param >= size:
            coords = range(size)
        else:
            assert rng is not None, "need an rng to subsample coordinates"
            coords = rng.choice(size, size=coords_per_param, replace=False)
        coords, fd = finite_difference(forward_value, p, coords=coords, step=step)
        got = analytic[id(p)].reshape(-1)[list(coords)]
        denom = np.maximum(np.abs(fd), 1e-3)
        rel = np.abs(got - fd) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
        assert np.all(rel < rel_tol), (
            f"gradient mismatch: analytic={got}, fd={fd}, rel={rel}"
        )
    return worst


def brute_force_codes(vec, c_max):
    """Reference two-stage selection: top-c_max by value (ties to the lowest
    index, via explicit candidate scan), then keep only strictly positive."""
    vec = list(vec)
    chosen = []
    remaining = list(range(len(vec)))
    for _ in range(c_max):
        best = None
        for i in remaining:
            if best is None or vec[i] > vec[best]:
                best = i
        chosen.append(best)
        remaining.remove(best)
    out = [0.0] * len(vec)
    for i in chosen:
        if vec[i] > 0:
            out[i] = 1.0
    return out
