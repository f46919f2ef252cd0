"""Central finite-difference gradient checking."""
import numpy as np


def numerical_grad(fn, tensor, h=1e-5, coords=None):
    """Central differences of the scalar ``fn()`` w.r.t. ``tensor.data``.

    ``coords`` restricts the check to a subset of flat indices; entries not
    listed are returned as NaN.
    """
    flat = tensor.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out.reshape(tensor.shape)


def relative_error(analytic, numeric, atol=1e-8):
    """``||a - n|| / max(||a||, ||n||)``; 0 when the difference is below ``atol``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    diff = np.linalg.norm(a - n)
    if diff <= atol:
        return 0.0
    return float(diff / max(np.linalg.norm(a), np.linalg.norm(n)))


def check_gradients(fn, tensors, h=1e-5, max_coords=None, rng=None, atol=1e-8):
    """Compare backprop against finite differences for each named tensor.

    ``fn`` must rebuild the graph on every call and return a scalar tensor.
    ``tensors`` maps names to leaf tensors with ``requires_grad=True``.
    ``atol`` is passed to :func:`relative_error`. Returns ``{name: relative error}``.
    """
    for t in tensors.values():
        t.grad = None
    fn().backward()
    errors = {}
    for name, t in tensors.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        coords = None
        if max_coords is not None and t.data.size > max_coords:
            rng = rng if rng is not None else np.random.default_rng(0)
            coords = rng.choice(t.data.size, size=max_coords, replace=False)
        numeric = numerical_grad(fn, t, h=h, coords=coords)
        errors[name] = relative_error(analytic, numeric, atol=atol)
    return errors
