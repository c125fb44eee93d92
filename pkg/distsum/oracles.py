#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Centralized ground truth for the distributed estimators.
"""
from fractions import Fraction
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .congest_sketches import NULL, EmptyInstanceError, FrequencyVector, ValueAssignment


def exact_stats(vals: ValueAssignment) -> FrequencyVector:
    r"""
    Frequency vector of ``vals`` by direct counting.

    Example:
        >>> fv = exact_stats(ValueAssignment.of([1, 1, 2]))
        >>> fv.F0, fv.F1, fv.moment(2)
        (2, 3, 5)
    """
    return FrequencyVector.from_values(vals)


def summary(vals: ValueAssignment, *, moments: Iterable[int] = range(5), top: int = 10) -> Dict[str, Any]:
    r"""
    JSON-ready statistics: ``F0..F4``, entropy and the top-10 list.
    """
    fv = exact_stats(vals)
    out: Dict[str, Any] = {"n": vals.n, "N": vals.N}
    out.update({f"F{p}": fv.moment(p) for p in moments})
    out["entropy"] = fv.entropy()
    out["top"] = [[value, count] for value, count in fv.top_k(top)]
    return out


def lp_distribution(vals: ValueAssignment, p: int) -> Tuple[np.ndarray, np.ndarray]:
    r"""
    Support values and their sampling probabilities ``f_i^p / F_p``.

    Raises:
        EmptyInstanceError: If no node holds a value.

    Example:
        >>> support, prob = lp_distribution(ValueAssignment.of([1, 1, 2]), 2)
        >>> prob.tolist()
        [0.8, 0.2]
    """
    fv = exact_stats(vals)
    if fv.F0 == 0:
        raise EmptyInstanceError("The lp distribution of an all-NULL assignment is undefined")
    total = fv.moment(p)
    prob = np.array([float(Fraction(f ** p, total)) for f in fv.frequencies.tolist()])
    return fv.support, prob


def sorted_placement(vals: ValueAssignment) -> np.ndarray:
    r"""
    Values in nondecreasing order with the NULL block first.
    """
    return np.sort(vals.values)


def total_variation(support: Sequence[int], expected: np.ndarray, samples: np.ndarray) -> float:
    r"""
    Total variation distance between ``expected`` over ``support`` and the
    empirical distribution of ``samples``; samples outside the support count
    as mass on an extra outcome.
    """
    support = np.asarray(support)
    samples = np.asarray(samples)
    index = {int(v): i for i, v in enumerate(support.tolist())}
    counts = np.zeros(len(support) + 1)
    for value, hits in zip(*np.unique(samples, return_counts=True)):
        counts[index.get(int(value), len(support))] += hits
    empirical = counts / max(len(samples), 1)
    return 0.5 * float(np.abs(empirical - np.r_[expected, 0.0]).sum())


def load_instance(path: str, n: Optional[int] = None, N: Optional[int] = None) -> ValueAssignment:
    r"""
    Reads ``nodeId value`` lines (1-based identifiers); missing nodes are
    NULL. ``n`` defaults to the largest identifier in the file.
    """
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'nodeId value', got '{line}'")
            pairs.append((lineno, int(fields[0]), int(fields[1])))
    if n is None:
        n = max((node for _, node, _ in pairs), default=1)
    values = np.full(n, NULL, dtype=np.int64)
    for lineno, node, value in pairs:
        if not 1 <= node <= n:
            raise ValueError(f"{path}:{lineno}: node {node} outside [1, {n}]")
        values[node - 1] = value
    return ValueAssignment.of(values, N)


def save_instance(vals: ValueAssignment, path: str):
    with open(path, "w") as f:
        for v in np.flatnonzero(vals.nonempty).tolist():
            f.write(f"{v + 1} {int(vals.values[v])}\n")
