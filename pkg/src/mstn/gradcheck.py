"""Central finite-difference checks against reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def finite_diff_gradcheck(
    f: Callable[[], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    n_coords: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error between autodiff and central differences for ``x``.

    ``f`` takes no arguments and rebuilds the graph from the current contents
    of ``x.data`` (and whatever else it closes over).  At most ``n_coords``
    coordinates are perturbed; all of them when ``x`` is smaller.  Relative
    error uses a floor of 1e-3 * max|grad| so that vanishing components are
    judged on an absolute scale.
    """
    if x.data.dtype != np.float64:
        raise TypeError("gradcheck needs float64 data")
    x.requires_grad = True
    x.grad = None
    out = f()
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    rng = np.random.default_rng(seed)
    if flat.size <= n_coords:
        coords = np.arange(flat.size)
    else:
        coords = rng.choice(flat.size, size=n_coords, replace=False)

    worst = 0.0
    ana = analytic.reshape(-1)
    # scale floor keeps near-zero gradients from dominating the relative error
    floor = max(1e-3, float(np.abs(ana).max()) * 1e-3)
    for idx in coords:
        num = _central(f, flat, idx, eps)
        # a ReLU/abs kink inside the stencil makes the estimate depend on eps;
        # shrink the stencil until two successive estimates agree
        h = eps
        for _ in range(3):
            finer = _central(f, flat, idx, h / 10)
            if abs(finer - num) <= 1e-7 * max(abs(num), abs(finer), floor):
                break
            num, h = finer, h / 10
        err = abs(num - ana[idx]) / max(abs(num), abs(ana[idx]), floor)
        worst = max(worst, err)
    return worst


def _central(f, flat: np.ndarray, idx: int, h: float) -> float:
    orig = flat[idx]
    flat[idx] = orig + h
    fp = float(f().data)
    flat[idx] = orig - h
    fm = float(f().data)
    flat[idx] = orig
    return (fp - fm) / (2 * h)


def gradcheck_many(f: Callable[[], Tensor], params: Sequence[Tensor], **kw) -> float:
    return max(finite_diff_gradcheck(f, p, **kw) for p in params)


def _t(rng, *shape):
    return Tensor(rng.normal(size=shape))


def _op_cases(rng):
    from . import tensor as T
    from .fusion import Afsm, Mffm
    from .layers import DeconvLayer, ResidualBlock, downsample_layer

    def probe(out_shape):
        r = _t(rng, *out_shape)
        return lambda y: T.sum_all(T.mul(y, r))

    x = _t(rng, 2, 3, 8, 8)
    w = _t(rng, 4, 3, 3, 3)
    b = _t(rng, 4)
    p = probe((2, 4, 4, 4))
    yield "conv2d", lambda: p(T.conv2d(x, w, b, 2, 1)), [x, w, b]

    xt = _t(rng, 2, 3, 5, 5)
    wt = _t(rng, 3, 4, 4, 4)
    bt = _t(rng, 4)
    pt = probe((2, 4, 10, 10))
    yield "conv_transpose2d", lambda: pt(T.conv_transpose2d(xt, wt, bt, 2, 1)), [xt, wt, bt]

    xg = _t(rng, 2, 5, 4, 6)
    pg = probe((2, 5, 1, 1))
    yield "global_avg_pool", lambda: pg(T.global_avg_pool(xg)), [xg]

    xf = _t(rng, 3, 6, 1, 1)
    wf = _t(rng, 4, 6)
    bf = _t(rng, 4)
    pf = probe((3, 4, 1, 1))
    yield "fully_connected", lambda: pf(T.fully_connected(xf, wf, bf)), [xf, wf, bf]

    la, lb = _t(rng, 2, 6, 1, 1), _t(rng, 2, 6, 1, 1)
    pa, pb = probe((2, 6, 1, 1)), probe((2, 6, 1, 1))

    def soft():
        a, bb = T.softmax_pair(la, lb)
        return T.add(pa(a), pb(bb))

    yield "softmax_pair", soft, [la, lb]

    target = _t(rng, 2, 3, 4, 4)
    pred = Tensor(target.data + np.where(rng.random(target.shape) < 0.5, -1, 1) * rng.uniform(0.1, 1, target.shape))
    yield "l1_loss", lambda: T.l1_loss(pred, target), [pred]

    u, v = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    g = _t(rng, 2, 3, 1, 1)
    pe = probe((2, 3, 4, 4))
    yield "add/sub/mul/scale/relu", lambda: pe(T.mul(T.relu(T.sub(T.add(u, T.scale(v, 0.7)), u * v)), g)), [u, v, g]

    rb = ResidualBlock(3, 5, rng, np.float64)
    xr = _t(rng, 1, 3, 6, 6)
    pr = probe((1, 5, 6, 6))
    yield "residual_block", lambda: pr(rb(xr)), [xr] + rb.parameters()

    down = downsample_layer(3, 4, rng, np.float64)
    xd = _t(rng, 1, 3, 8, 8)
    pd = probe((1, 4, 4, 4))
    yield "downsample", lambda: pd(down(xd)), [xd] + down.parameters()

    up = DeconvLayer(4, 3, rng=rng, dtype=np.float64)
    xu = _t(rng, 1, 4, 4, 4)
    pu = probe((1, 3, 8, 8))
    yield "upsample", lambda: pu(up(xu)), [xu] + up.parameters()

    afsm = Afsm(8, rng, np.float64)
    x1, x2 = _t(rng, 2, 8, 4, 4), _t(rng, 2, 8, 4, 4)
    pa2 = probe((2, 8, 4, 4))
    yield "afsm", lambda: pa2(afsm(x1, x2)), [x1, x2] + afsm.parameters()

    mffm = Mffm(4, 8, rng=rng, dtype=np.float64)
    fine, coarse = _t(rng, 1, 4, 8, 8), _t(rng, 1, 8, 4, 4)
    pm = probe((1, 4, 8, 8))
    yield "mffm", lambda: pm(mffm(fine, coarse)), [fine, coarse] + mffm.parameters()


def _model_cases(rng):
    from . import tensor as T
    from .grid import MstnConfig, build

    for n in (2, 3):
        model = build(MstnConfig(n, n, 4), seed=int(rng.integers(2**31)), dtype=np.float64)
        x = Tensor(rng.random((1, 3, 16, 16)))
        y = Tensor(rng.random((1, 3, 16, 16)))
        yield f"mstn_scales_{n}", (lambda m=model, x=x, y=y: T.l1_loss(m(x), y)), [x] + model.parameters()


def run_standard_checks(seed: int = 0, eps: float = 1e-4, tol: float = 1e-4,
                        n_coords: int = 64) -> list:
    """Gradient-check every differentiable op and the end-to-end network.

    Returns one ``{"name", "max_rel_error", "passed"}`` dict per check.  For
    the end-to-end models the coordinate budget is spread over all parameter
    tensors (at least 4 coordinates each).
    """
    rng = np.random.default_rng(seed)
    results = []
    cases = list(_op_cases(rng)) + list(_model_cases(rng))
    for name, f, leaves in cases:
        per = n_coords if not name.startswith("mstn") else max(4, n_coords // len(leaves))
        err = max(finite_diff_gradcheck(f, leaf, eps=eps, n_coords=per, seed=seed + i)
                  for i, leaf in enumerate(leaves))
        results.append({"name": name, "max_rel_error": err, "passed": bool(err < tol)})
    return results
