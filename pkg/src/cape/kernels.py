"""Backend selection for the hot row kernels.

The compiled Cython module is used when it was built and importable; set
``CAPE_PURE_PYTHON=1`` to force the numpy fallback. Both expose the same
functions with identical signatures.
"""
import os

import numpy as np

from . import _pykernels

_NAMES = (
    "softmax_rows",
    "softmax_rows_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "sweep_counts",
)

compiled = None
if os.environ.get("CAPE_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

BACKEND = "cython" if compiled is not None else "numpy"


def _contig(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def backend_module(name=None):
    """Return the kernel module for ``name`` ("cython", "numpy") or the active one."""
    name = name or BACKEND
    if name == "numpy":
        return _pykernels
    if name == "cython":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")


_impl = backend_module()


def softmax_rows(x):
    return _impl.softmax_rows(_contig(x))


def softmax_rows_backward(y, g):
    return _impl.softmax_rows_backward(_contig(y), _contig(g))


def layer_norm_forward(x, gamma, beta, eps):
    return _impl.layer_norm_forward(_contig(x), _contig(gamma), _contig(beta), float(eps))


def layer_norm_backward(g, xhat, rstd, gamma):
    return _impl.layer_norm_backward(_contig(g), _contig(xhat), _contig(rstd), _contig(gamma))


def sweep_counts(max_seen, max_unseen, tie_to_seen, hit_seen, hit_unseen, label_seen, biases):
    return _impl.sweep_counts(
        _contig(max_seen), _contig(max_unseen), _u8(tie_to_seen), _u8(hit_seen),
        _u8(hit_unseen), _u8(label_seen), _contig(biases),
    )
