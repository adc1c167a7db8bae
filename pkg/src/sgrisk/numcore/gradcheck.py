"""Central finite differences against autodiff."""
import numpy as np

from .tensor import backward


def numeric_grad(fn, tensor, index, h=1e-5):
    """d fn() / d tensor.data[index] by central differences."""
    old = tensor.data[index]
    tensor.data[index] = old + h
    fp = fn().item()
    tensor.data[index] = old - h
    fm = fn().item()
    tensor.data[index] = old
    return (fp - fm) / (2.0 * h)


def relative_error(a, n, floor=1e-6):
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(fn, params, h=1e-5, max_entries=None, rng=None):
    """Worst relative error between autodiff and finite differences.

    ``fn`` rebuilds the scalar loss from scratch. With ``max_entries`` each
    parameter is checked on that many entries (always including its largest
    analytic gradient) plus one random-direction directional derivative
    covering all of its entries at once.
    """
    for p in params:
        p.grad = None
    backward(fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    report = {}
    for p, g in zip(params, analytic):
        idxs = list(np.ndindex(p.data.shape))
        if max_entries is not None and len(idxs) > max_entries:
            top = np.unravel_index(int(np.argmax(np.abs(g))), g.shape)
            pick = rng.choice(len(idxs), size=max_entries - 1, replace=False)
            idxs = [top] + [idxs[i] for i in pick]
        err = 0.0
        for ix in idxs:
            err = max(err, relative_error(g[ix], numeric_grad(fn, p, ix, h)))
        if max_entries is not None:
            d = rng.standard_normal(p.data.shape)
            old = p.data.copy()
            p.data = old + h * d
            fp = fn().item()
            p.data = old - h * d
            fm = fn().item()
            p.data = old
            err = max(err, relative_error(float((g * d).sum()), (fp - fm) / (2 * h)))
        report[p.name] = err
        worst = max(worst, err)
    return worst, report
