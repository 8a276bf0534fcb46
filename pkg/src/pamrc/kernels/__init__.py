"""Kernel backend selection.

The hot Monte Carlo loops (path simulation, meeting-time accumulation,
change-of-measure weights) exist twice: a compiled Cython core and a pure
Python twin with identical semantics and identical random streams.  The
compiled core is used when importable; set ``PAMRC_PURE_PYTHON=1`` to force
the fallback.  ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _pykernels as pure

compiled = None
if not os.environ.get("PAMRC_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

active = compiled if compiled is not None else pure

BACKEND = active.BACKEND

simulate_path = active.simulate_path
pair_overlap = active.pair_overlap
girsanov_terms = active.girsanov_terms
bundle_overlap_batch = active.bundle_overlap_batch
cross_overlap_batch = active.cross_overlap_batch
girsanov_batch = active.girsanov_batch
derive_key = active.derive_key

__all__ = [
    "BACKEND", "active", "compiled", "pure",
    "simulate_path", "pair_overlap", "girsanov_terms",
    "bundle_overlap_batch", "cross_overlap_batch", "girsanov_batch",
    "derive_key",
]
