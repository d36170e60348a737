"""Independent reference computations and data generators shared by tests."""
import numpy as np


def clustered_grid(rng, rows, cols, channels, n_clusters=3, spread=0.3):
    centers = rng.normal(size=(n_clusters, channels)) * 3
    labels = rng.integers(n_clusters, size=rows * cols)
    x = centers[labels] + spread * rng.normal(size=(rows * cols, channels))
    return x.reshape(rows, cols, channels), labels.reshape(rows, cols)


def noisy_keys(rng, values, key_dim=None, noise=1.0):
    c = values.shape[-1]
    proj = rng.normal(size=(c, key_dim or c)) / np.sqrt(c)
    keys = values @ proj
    return keys + noise * keys.std() * rng.normal(size=keys.shape)


def brute_merge(x, assignment):
    """Group every token with its target and average, by explicit loops."""
    flat = x.reshape(-1, x.shape[-1])
    groups = {}
    for i, a in enumerate(assignment):
        root = i if a < 0 else int(a)
        groups.setdefault(root, []).append(i)
    recon = np.empty_like(flat)
    for members in groups.values():
        m = sum(flat[j] for j in members) / len(members)
        for j in members:
            recon[j] = m
    return groups, recon.reshape(x.shape)
