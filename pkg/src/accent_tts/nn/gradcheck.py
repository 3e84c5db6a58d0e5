"""Finite-difference verification of reverse-mode gradients."""
import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic, numeric, floor=1e-6):
    """Component-wise |a − n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(fn, x, eps=1e-5, floor=1e-6):
    """Worst relative error between the reverse-mode and central-difference gradients.

    ``fn`` maps a Tensor (or a list of Tensors) to a scalar Tensor.
    """
    xs = x if isinstance(x, (list, tuple)) else [x]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = fn(x)
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in xs]
    worst = 0.0
    with no_grad():
        for t, a in zip(xs, analytic):
            num = np.empty_like(t.data)
            flat = t.data.reshape(-1)
            nflat = num.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn(x).item()
                flat[i] = orig - eps
                fm = fn(x).item()
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * eps)
            worst = max(worst, float(relative_error(a, num, floor).max(initial=0.0)))
    return worst


def grad_check_params(loss_fn, params, eps=1e-5, floor=1e-6, per_tensor=None, rng=None):
    """Check ``loss_fn()`` against finite differences over parameters of a ParamStore.

    With ``per_tensor`` set, a random subset of that many coordinates is
    checked in each tensor (always including the largest-gradient entry).
    Returns ``(worst_error, {name: error})``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params.zero_grad()
    loss_fn().backward()
    report = {}
    with no_grad():
        for name, t in params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            if per_tensor is None or flat.size <= per_tensor:
                idx = np.arange(flat.size)
            else:
                idx = rng.choice(flat.size, size=per_tensor - 1, replace=False)
                idx = np.unique(np.append(idx, int(np.argmax(np.abs(gflat)))))
            errs = []
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_fn().item()
                flat[i] = orig - eps
                fm = loss_fn().item()
                flat[i] = orig
                errs.append(relative_error(gflat[i], (fp - fm) / (2 * eps), floor))
            report[name] = float(np.max(errs))
    return max(report.values(), default=0.0), report


__all__ = ["grad_check", "grad_check_params", "relative_error", "Tensor"]
