"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Both backends evaluate the same floating-point expressions in the same
order, so the Adam update is bit-identical between them.
"""

import numpy as np


def masked_adam_update(param, grad, m, v, mask, lr, beta1, beta2, eps, bias1, bias2):
    if mask is None:
        m[:] = beta1 * m + (1.0 - beta1) * grad
        v[:] = beta2 * v + (1.0 - beta2) * (grad * grad)
        mhat = m / bias1
        vhat = v / bias2
        param[:] = param - lr * mhat / (np.sqrt(vhat) + eps)
        return
    keep = np.flatnonzero(mask)
    g = grad[keep]
    mk = beta1 * m[keep] + (1.0 - beta1) * g
    vk = beta2 * v[keep] + (1.0 - beta2) * (g * g)
    m[keep] = mk
    v[keep] = vk
    param[keep] = param[keep] - lr * (mk / bias1) / (np.sqrt(vk / bias2) + eps)


def pair_counts(bits):
    a = np.asarray(bits, dtype=np.int64)
    inter = a @ a.T
    counts = np.diag(inter)
    union = counts[:, None] + counts[None, :] - inter
    return inter, union
