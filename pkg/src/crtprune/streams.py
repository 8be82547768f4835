"""Counter-based random streams keyed by (master seed, module, index).

Every batch of replicates draws from its own Philox stream, so results do
not depend on how batches are scheduled across workers.
"""

import numpy as np

MODULE_IDS = {"mechanism": 1, "csbp": 2, "mass": 3, "gw": 4, "crt": 5}


def stream(master_seed, module, index=0):
    """Generator for replicate batch ``index`` of ``module``."""
    mid = MODULE_IDS[module] if isinstance(module, str) else int(module)
    seq = np.random.SeedSequence([int(master_seed) & (2 ** 64 - 1), mid, int(index)])
    return np.random.Generator(np.random.Philox(seq))


def batch_sizes(n, batch):
    """Split n replicates into consecutive batches of at most ``batch``."""
    full, rest = divmod(int(n), int(batch))
    return [batch] * full + ([rest] if rest else [])
