#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Registry of run statistics (rounds, messages, congestion, estimation error)
reported through TensorBoard when it is available.
"""
import warnings
from enum import IntEnum
from typing import Dict, List, Optional


try:
    from torch.utils.tensorboard import SummaryWriter
except ImportError:
    warnings.warn("Tensorboard library was not found. Using dummy SummaryWriter")

    class SummaryWriter:
        def __init__(self, *args, **kwargs):
            pass

        def add_scalar(self, *args, **kwargs):
            pass


class StatType(IntEnum):
    r"""
    Namespaces under which run statistics are reported.

    1. ROUNDS: communication rounds used by a run
    2. MESSAGES: messages sent by a run
    3. CONGESTION: maximum messages queued on one edge direction
    4. ERROR: relative error of an estimate against the oracle
    """
    ROUNDS = 1
    MESSAGES = 2
    CONGESTION = 3
    ERROR = 4


class Stat:
    r"""
    Aggregates a metric over trials and reports it every ``1 / frequency``
    updates.

    Examples:
        >>> stat = Stat(StatType.ROUNDS, "f0", frequency=0.1)
        >>> for seed in range(20):
        ...     stat.log({"rounds": 100 + seed})
        >>> stat.count
        20
    """
    summary_writer: Optional[SummaryWriter] = None

    def __init__(
        self,
        stat_type: StatType,
        name: str,
        frequency: float = 1.0,
        reduction: str = "avg",
    ):
        r"""
        Args:
            stat_type: Type of the statistic from ``StatType``.
            name: Name identifying this ``Stat``, usually the algorithm.
            frequency: Fraction of updates that are reported, in ``(0, 1]``.
            reduction: ``"avg"`` reports the mean of the window, ``"max"``
                its maximum and ``"sample"`` the latest value.
        """
        if not 0 < frequency <= 1:
            raise ValueError(f"frequency must lie in (0, 1], got {frequency}")
        if reduction not in ("avg", "max", "sample"):
            raise ValueError(f"Unknown reduction '{reduction}'")
        self.type = stat_type
        self.name = name
        self.report = int(1 / frequency)
        self.reduction = reduction
        self.writer = Stat.summary_writer if Stat.summary_writer else SummaryWriter()
        self.count = 0
        self.reported: List[Dict[str, float]] = []
        self.reset()

    def reset(self):
        self.window: Dict[str, List[float]] = {}

    def log(self, named_value: Dict[str, float]):
        for key, value in named_value.items():
            self.window.setdefault(key, []).append(float(value))
        self.count += 1
        if self.count % self.report == 0:
            summary = {key: self._reduce(values) for key, values in self.window.items()}
            for key, value in summary.items():
                self.writer.add_scalar(f"{self.type.name}:{self.name}/{key}", value, self.count)
            self.reported.append(summary)
            self.reset()

    def _reduce(self, values: List[float]) -> float:
        if self.reduction == "avg":
            return sum(values) / len(values)
        if self.reduction == "max":
            return max(values)
        return values[-1]


# global variable keeping the list of all the stats.
Stats: List[Stat] = []


def set_global_summary_writer(summary_writer: SummaryWriter):
    Stat.summary_writer = summary_writer


def add(*args: Stat):
    Stats.extend(args)


def clear():
    Stats.clear()


def remove(name: str):
    Stats[:] = [stat for stat in Stats if stat.name != name]


def update(
    stat_type: Optional[StatType] = None,
    name: Optional[str] = None,
    **named_values: float,
):
    r"""
    Logs ``named_values`` into every registered stat matching ``stat_type``
    and ``name`` (``None`` matches all).
    """
    for stat in Stats:
        if (stat_type is None or stat.type == stat_type) and (
            name is None or stat.name == name
        ):
            stat.log(named_values)
