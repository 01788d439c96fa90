"""Independent brute-force oracle: exhaustive enumeration over all 2^N
mastery assignments. Deliberately shares no code with the package kernels."""

from __future__ import annotations

import math
from itertools import product


def enumerate_marginals(
    parents: list[int],
    gamma: list[float],
    records: list[tuple[int, bool, float]],
    epsilon: float,
) -> tuple[list[float], float]:
    """Exact marginals and log marginal likelihood by full enumeration.

    ``parents[i]`` is -1 for the root; each record is
    (node index, correct, rate-given-mastery).
    """
    n = len(parents)
    total = 0.0
    mass_on = [0.0] * n
    for state in product((0, 1), repeat=n):
        prior = 1.0
        for i in range(n):
            p = parents[i]
            if p < 0:
                prior *= gamma[i] if state[i] else 1.0 - gamma[i]
            elif state[p] == 1:
                if state[i] != 1:
                    prior = 0.0
                    break
            else:
                prior *= gamma[i] if state[i] else 1.0 - gamma[i]
        if prior == 0.0:
            continue
        lik = 1.0
        for node, correct, rate in records:
            p_correct = rate if state[node] else epsilon
            lik *= p_correct if correct else 1.0 - p_correct
        joint = prior * lik
        total += joint
        for i in range(n):
            if state[i]:
                mass_on[i] += joint
    marginals = [m / total for m in mass_on]
    return marginals, math.log(total)
