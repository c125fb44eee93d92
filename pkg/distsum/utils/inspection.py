#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
This module includes utils for checking named items (config fields, graphs)
against predicates and collecting the violators.
"""
from typing import Any, Callable, Iterable, List, Optional, Tuple


class Inspector:
    """
    An inspector of named items given a specific predicate.

    Example:
        >>> inspector = Inspector("positive", lambda x: x > 0)
        >>> inspector.validate([("a", 1), ("b", -2)])
        False
        >>> inspector.violators
        ['b (-2)']
    """

    def __init__(
        self,
        name: str,
        predicate: Callable[[Any], bool],
        message: Optional[str] = None,
    ):
        """
        Args:
            name: String to represent the predicate.
            predicate: Callable boolean function which tests a hypothesis on an item.
            message: Optional value to hold a message about violating this predicate.
        """
        self.name = name
        self.predicate = predicate
        self.message = message
        # Names of items that violated the predicate; not emptied between calls.
        self.violators: List[str] = []

    def validate(self, items: Iterable[Tuple[str, Any]]) -> bool:
        """
        Checks every ``(name, item)`` pair against the predicate.

        Returns:
            Flag indicating if the predicate is satisfied by all items.
        """
        valid = True
        for name, item in items:
            if not self.predicate(item):
                valid = False
                self.violators.append(f"{name} ({describe(item)})")
        return valid


def describe(item: Any) -> str:
    """
    Short printable form of an inspected item.
    """
    text = repr(item)
    return text if len(text) <= 60 else text[:57] + "..."
