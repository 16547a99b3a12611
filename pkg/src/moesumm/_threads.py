"""BLAS thread limiting for the hot loops.

The model's kernels are small ([batch*len, d] with d <= a few hundred);
multi-threaded BLAS loses more to synchronization than it gains, roughly
1.6x wall-clock on a 2-core box. Heavy entry points (training, batched
decoding, gradient probing) pin BLAS to one thread for their duration.
"""

from __future__ import annotations

from contextlib import contextmanager

try:
    from threadpoolctl import threadpool_limits as _limits
except ImportError:  # pragma: no cover - threadpoolctl is a declared dep
    _limits = None


@contextmanager
def single_thread_blas():
    if _limits is None:
        yield
        return
    with _limits(limits=1):
        yield
