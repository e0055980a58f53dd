"""Independent oracles shared by unit and acceptance tests."""
import itertools

import numpy as np

from cyclens import learner
from cyclens.learner import Architecture, Batch, PolicyParams


def random_instance(rng, continuous, state_dim=4, hidden=6, n_out=3, n=3):
    arch = Architecture(state_dim, n_out, continuous, hidden)
    p = PolicyParams(arch, rng.normal(0, 0.5, arch.size))
    if continuous:
        p["log_std"][:] = rng.uniform(-1, 0.5, n_out)
        actions = rng.normal(0, 1, (n, n_out))
    else:
        actions = rng.integers(n_out, size=n)
    batch = Batch(rng.normal(size=(n, state_dim)), actions, rng.normal(size=n),
                  rng.normal(size=(n, state_dim)), rng.random(n) < 0.3)
    return p, batch


def finite_difference_gradient(params, batch, gamma=0.99, c_v=0.5, entropy_coef=0.01, h=1e-5):
    """Central differences of the training objective, advantages and targets frozen."""
    adv, targets = learner.td_quantities(params, batch, gamma)
    g = np.zeros(params.arch.size)
    for i in range(params.arch.size):
        up, dn = params.copy(), params.copy()
        up.flat[i] += h
        dn.flat[i] -= h
        g[i] = (learner.surrogate(up, batch, adv, targets, c_v, entropy_coef)
                - learner.surrogate(dn, batch, adv, targets, c_v, entropy_coef)) / (2 * h)
    return g, adv, targets


def max_relative_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def simplex_grid_min(B, step=0.01):
    """Exhaustive minimum of w^T B w over a simplex grid (M = 2 or 3)."""
    M = B.shape[0]
    n = int(round(1 / step))
    best = np.inf
    if M == 2:
        for i in range(n + 1):
            w = np.array([i / n, 1 - i / n])
            best = min(best, w @ B @ w)
        return best
    assert M == 3
    for i, j in itertools.product(range(n + 1), repeat=2):
        if i + j <= n:
            w = np.array([i / n, j / n, (n - i - j) / n])
            best = min(best, w @ B @ w)
    return best


def majority_oracle(actions):
    counts = {}
    for a in actions:
        counts[a] = counts.get(a, 0) + 1
    top = max(counts.values())
    return sorted(a for a, c in counts.items() if c == top)


def binning_oracle(actions, low, high, n_bins):
    """Per-dimension brute force; returns the list of admissible outputs per dimension."""
    actions = [list(a) for a in actions]
    k = len(actions[0])
    per_dim = []
    for d in range(k):
        width = (high[d] - low[d]) / n_bins
        members = [[] for _ in range(n_bins)]
        for a in actions:
            j = int((a[d] - low[d]) // width)
            j = min(max(j, 0), n_bins - 1)
            members[j].append(a[d])
        top = max(len(m) for m in members)
        per_dim.append([sum(m) / len(m) for m in members if len(m) == top])
    return per_dim


def parzen_oracle(actions, h):
    m = len(actions)
    dens = []
    for i in range(m):
        d = 0.0
        for j in range(m):
            sq = sum((actions[i][l] - actions[j][l]) ** 2 for l in range(len(actions[i])))
            d += np.exp(-sq / h ** 2)
        dens.append(d)
    best = max(dens)
    return actions[dens.index(best)]


def ste_oracle(actions):
    pool = [list(map(float, a)) for a in actions]
    while len(pool) > 2:
        k = len(pool[0])
        mean = [sum(a[l] for a in pool) / len(pool) for l in range(k)]
        dist = [sum((a[l] - mean[l]) ** 2 for l in range(k)) ** 0.5 for a in pool]
        worst = max(range(len(pool)), key=lambda i: (dist[i], i))
        pool.pop(worst)
    k = len(pool[0])
    return [sum(a[l] for a in pool) / len(pool) for l in range(k)]
