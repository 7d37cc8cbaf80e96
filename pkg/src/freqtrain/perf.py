"""Process-level performance knobs.

The training loop allocates and frees hundreds of MB of im2col scratch
per iteration; with glibc's default mmap threshold those blocks go back
to the kernel on every free and page-faulting them in again dominates
the step time on small machines.  Raising the malloc thresholds keeps
the arenas resident.  No-op on non-glibc platforms.
"""

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator():
    global _done
    if _done:
        return
    _done = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass
