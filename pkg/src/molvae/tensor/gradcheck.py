from __future__ import annotations

import numpy as np

from .core import Tape, precision


def numeric_grad(fn, x, h=1e-5, coords=None):
    """Central finite differences of ``fn()`` w.r.t. array ``x`` (in place).

    ``fn`` may return a vector of terms whose sum is the function value;
    each term is then differenced on its own before summing, so terms that
    do not depend on ``x`` cancel exactly instead of adding rounding noise.
    ``coords`` restricts the estimate to those flat indices; the other
    entries of the result are left at zero.
    """
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        old = flat[i]
        flat[i] = old + h
        fp = np.asarray(fn(), dtype=np.float64)
        flat[i] = old - h
        fm = np.asarray(fn(), dtype=np.float64)
        flat[i] = old
        gflat[i] = np.sum(fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=0.0):
    """max |a-b| / max(|a|, |b|, 1e-8), taken over the whole array.

    When both arrays lie below ``floor`` (the finite-difference resolution)
    they are indistinguishable from zero and the error is reported as 0.
    """
    peak = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if peak < floor:
        return 0.0
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-8)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


def check_gradients(build_loss, tensors, h=1e-5, coords_per_tensor=None, rng=None, build_terms=None):
    """Compare tape gradients with finite differences at 64-bit precision.

    ``build_loss`` maps nothing to a scalar Tensor and must read the
    current ``.data`` of ``tensors`` (a name -> Tensor mapping).  With
    ``coords_per_tensor = k`` only k entries per tensor are probed: the
    k // 2 largest analytic entries plus random ones.  Returns
    name -> relative error over the probed entries.  Entries whose analytic
    and numeric values are both below the rounding resolution of the
    central difference, 16 eps |loss| / h, count as agreeing zeros.
    ``build_terms``, if given, returns the loss as a vector of summands and
    is used for the numeric side (see ``numeric_grad``).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with precision(np.float64):
        for t in tensors.values():
            t.data = t.data.astype(np.float64)
        with Tape() as tape:
            loss = build_loss()
        floor = 16 * np.finfo(np.float64).eps * max(abs(float(loss.data)), 1.0) / h
        analytic = tape.backward(loss, tensors)
        errors = {}
        for name, t in tensors.items():
            a = analytic[name].reshape(-1)
            if coords_per_tensor is None or a.size <= coords_per_tensor:
                coords = np.arange(a.size)
            else:
                top = np.argsort(-np.abs(a), kind="stable")[: coords_per_tensor // 2]
                rest = rng.choice(a.size, coords_per_tensor - len(top), replace=False)
                coords = np.unique(np.concatenate([top, rest]))
            numeric = numeric_grad(build_terms or (lambda: build_loss().data), t.data, h,
                                   coords).reshape(-1)
            errors[name] = rel_error(a[coords], numeric[coords], floor)
    return errors
