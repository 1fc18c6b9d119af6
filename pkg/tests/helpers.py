"""Shared oracles for the test suite: central finite differences etc."""
import numpy as np

from emofuse import autodiff as ad


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function over every entry of x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return np.abs(a - b).max(initial=0.0) / denom


def fd_check(build, arrays, tol, h=1e-5, seed=0):
    """Compare backward grads of build(*tensors) against finite differences.

    build maps Tensor inputs to one output Tensor; the scalar loss is a fixed
    random weighted sum of the output so every output entry matters.
    """
    rng = np.random.default_rng(seed)
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    r = rng.normal(size=out.shape)
    ad.sum_(ad.mul(out, ad.Tensor(r))).backward()
    errs = []
    for i, t in enumerate(tensors):
        def f(x, i=i):
            probe = [ad.Tensor(a) for a in arrays]
            probe[i] = ad.Tensor(x)
            with ad.no_grad():
                return float((build(*probe).data * r).sum())
        errs.append(rel_err(t.grad, numeric_grad(f, arrays[i], h)))
    return max(errs)
