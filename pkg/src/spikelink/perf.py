"""Process-level performance knobs for long CPU runs."""

import ctypes
import os

# glibc mallopt parameter ids (malloc.h)
_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator() -> bool:
    """Keep freed large buffers inside the malloc arena.

    The autodiff tape pins every intermediate until backward finishes, so a
    training step allocates tens of MB afresh each time; under glibc defaults
    those buffers are mmap'd, page-faulted in, and returned to the kernel
    every step, which roughly doubles step time. Raising the trim and mmap
    thresholds keeps the pages in the arena. Returns False (and changes
    nothing) on non-glibc platforms.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok1 = libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        ok2 = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        return bool(ok1) and bool(ok2)
    except OSError:
        return False


def limit_blas_threads(n: int = 1) -> None:
    """Pin BLAS thread pools, for deterministic reductions in matmul.

    Only effective if called before numpy first initializes its BLAS; the
    CLI does this before importing anything heavy.
    """
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
