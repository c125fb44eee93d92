#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved

from typing import Optional

import numpy as np


class UniformPartnerSampler:
    r"""
    Draws GOSSIP partner maps: every node independently picks a partner
    uniformly from all ``n`` nodes, itself included, so
    ``Pr[t(u) = v] = 1/n`` for every pair.
    """

    def __init__(self, num_nodes: int, generator: Optional[np.random.Generator] = None):
        r"""
        Args:
            num_nodes (int): number of nodes taking part in each round.
            generator (Generator): Generator used in sampling.
        """
        if num_nodes <= 0:
            raise ValueError(
                "num_nodes should be a positive integer "
                "value, but got num_nodes={}".format(num_nodes)
            )
        self.num_nodes = num_nodes
        self.generator = generator if generator is not None else np.random.default_rng()

    def __len__(self):
        return self.num_nodes

    def sample(self, rounds: int = 1) -> np.ndarray:
        r"""
        Returns an array of shape ``(rounds, num_nodes)`` whose row ``r`` is
        the partner map of the ``r``-th round.
        """
        return self.generator.integers(0, self.num_nodes, size=(rounds, self.num_nodes))

    def __iter__(self):
        while True:
            yield self.sample(1)[0]
