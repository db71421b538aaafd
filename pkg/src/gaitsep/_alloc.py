"""Keep freed numpy temporaries on the heap during training.

A training step creates and frees many megabyte-sized temporaries. With
glibc defaults each one is mmapped and unmapped, or the heap top is trimmed
after it is freed, so every step pays page faults for fresh memory. Raising
the mmap and trim thresholds lets the allocator reuse those pages. This
is a no-op off glibc.
"""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def keep_heap(mmap_threshold: int = 32 << 20, trim_threshold: int = 256 << 20) -> bool:
    """Apply the thresholds once per process; returns whether glibc accepted them."""
    global _done
    if _done or not sys.platform.startswith("linux"):
        return _done
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):  # musl and friends
        return False
    _done = bool(mallopt(_M_MMAP_THRESHOLD, mmap_threshold)) and bool(mallopt(_M_TRIM_THRESHOLD, trim_threshold))
    return _done
