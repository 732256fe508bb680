"""Discrete ego meta-actions.

The integer codes are part of the on-disk trajectory and checkpoint formats,
so they must never be renumbered.
"""

from __future__ import annotations

from enum import IntEnum


class EgoAction(IntEnum):
    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


N_ACTIONS = len(EgoAction)
