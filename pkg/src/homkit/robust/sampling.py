"""Minimal-sample generators: uniform and PROSAC."""

from __future__ import annotations

import math

import numpy as np


def sample_uniform(n, m, rng):
    if n < m:
        raise ValueError(f"cannot draw {m} distinct indices from {n}")
    return rng.choice(n, size=m, replace=False)


class ProsacSampler:
    """PROSAC growth schedule over quality-sorted data (best first).

    Iteration ``t`` (1-based) draws from the top-``n_t`` prefix, always
    including its last element while the schedule is running.  After the
    schedule reaches ``n`` and its budget ``T'_n`` is spent, sampling is
    uniform over all points.
    """

    def __init__(self, n, m, growth_max_samples=200_000):
        if n < m:
            raise ValueError(f"cannot draw {m} distinct indices from {n}")
        self.n = n
        self.m = m
        # t_prime[k] is T'_{m+k}: the iteration at which the prefix grows past m+k
        T_n = float(growth_max_samples)
        for i in range(m):
            T_n *= (m - i) / (n - i)
        t_prime = [1]
        for size in range(m, n):
            T_next = T_n * (size + 1) / (size + 1 - m)
            t_prime.append(t_prime[-1] + max(1, math.ceil(T_next - T_n)))
            T_n = T_next
        self.t_prime = np.asarray(t_prime, dtype=np.int64)

    def prefix_size(self, iteration):
        # the prefix grows whenever the iteration counter reaches T'_size
        grown = int(np.searchsorted(self.t_prime[:-1], iteration, side="right"))
        return self.m + grown

    def sample(self, iteration, rng):
        size = self.prefix_size(iteration)
        if size >= self.n and iteration > self.t_prime[-1]:
            return rng.choice(self.n, size=self.m, replace=False)
        rest = rng.choice(size - 1, size=self.m - 1, replace=False)
        return np.append(rest, size - 1)


def sample_prosac(n, m, iteration, rng, growth_max_samples=200_000):
    return ProsacSampler(n, m, growth_max_samples).sample(iteration, rng)
