"""Pure-Python versions of the spanned-tree sweeps.

Leaves are in time order. Leaf k owns the segment (b[k], H[k]] and hangs
off the segment of par[k], the previous leaf with a strictly smaller b.
Cut points of leaf k sit in ph[ptr[k]:ptr[k+1]] sorted by height, and
pmin holds their running minimum clock.
"""

import bisect
import math

import numpy as np


def previous_smaller(b):
    """par[k] = max{j < k : b[j] < b[k]}, or -1."""
    b = np.asarray(b, dtype=float).tolist()
    par = [-1] * len(b)
    stack = []
    for k, v in enumerate(b):
        while stack and b[stack[-1]] >= v:
            stack.pop()
        par[k] = stack[-1] if stack else -1
        stack.append(k)
    return np.array(par, dtype=np.int64)


def path_min_clocks(b, H, par, ptr, ph, pmin):
    """Smallest cut clock on the root-to-leaf path of every leaf."""
    b = np.asarray(b, dtype=float).tolist()
    H = np.asarray(H, dtype=float).tolist()
    par = np.asarray(par).tolist()
    ptr = np.asarray(ptr).tolist()
    ph = np.asarray(ph, dtype=float).tolist()
    pmin = np.asarray(pmin, dtype=float).tolist()

    def own(k, x):
        lo = ptr[k]
        i = bisect.bisect_right(ph, x, lo, ptr[k + 1])
        return pmin[i - 1] if i > lo else math.inf

    n = len(b)
    below = [math.inf] * n
    out = [math.inf] * n
    for k in range(n):
        j = par[k]
        if j >= 0:
            below[k] = min(own(j, b[k]), below[j])
        out[k] = min(own(k, H[k]), below[k])
    return np.array(out)
