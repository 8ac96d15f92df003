"""Independent reference implementations the package is checked against."""
from itertools import combinations

import numpy as np


def lcs_bruteforce(a, b):
    """Longest common subsequence by enumerating every subsequence of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subseq(sub, seq):
        it = iter(seq)
        return all(tok in it for tok in sub)

    for r in range(len(short), 0, -1):
        for idx in combinations(range(len(short)), r):
            if is_subseq([short[i] for i in idx], long_):
                return r
    return 0


def numeric_gradients(f, params, step=1e-3, pattern=None):
    """Central differences of scalar ``f()`` w.r.t. every entry of every array in ``params``.

    With ``pattern`` given, entries whose +/- perturbations change ``pattern()``
    (a piecewise-linear kink was crossed) come back as NaN.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + step
            up = f()
            pat_up = pattern() if pattern else None
            p[i] = old - step
            down = f()
            pat_down = pattern() if pattern else None
            p[i] = old
            g[i] = np.nan if pat_up != pat_down else (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Worst relative error, ignoring NaN entries of ``numeric``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        keep = ~np.isnan(n)
        denom = np.maximum(np.maximum(np.abs(a[keep]), np.abs(n[keep])), floor)
        if denom.size:
            worst = max(worst, float(np.max(np.abs(a[keep] - n[keep]) / denom)))
    return worst


def gradcheck_mlp(dims, seed, step=1e-5):
    """Max relative error between mlp_backward and central differences on a seeded toy net."""
    from lens_forge.encoder import MlpWeights, mlp_backward, mlp_forward

    rng = np.random.default_rng(seed)
    w = MlpWeights.init(dims, seed)
    # non-zero biases so the bias gradients are exercised away from the init
    for b in w.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    u = rng.normal(0, 1, (3, dims[0]))
    g = rng.normal(0, 1, (3, dims[-1]))
    gw, gb, gu = mlp_backward(u, w, g)

    def loss():
        return float(np.sum(mlp_forward(u, w) * g))

    def active():
        # ReLU on/off pattern of every hidden unit
        h, out = u, []
        for W, b in zip(w.weights[:-1], w.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            out.append((h > 0).tobytes())
        return tuple(out)

    params = w.params()
    numeric = numeric_gradients(loss, params + [u], step, pattern=active)
    analytic = []
    for a, b in zip(gw, gb):
        analytic += [a, b]
    analytic.append(gu)
    return max_relative_error(analytic, numeric)
