"""Small counting helpers shared by the pruners."""

import math

# slack for products like 0.3 * 10 = 3.0000000000000004
_EPS = 1e-9


def ceil_count(fraction: float, total: int) -> int:
    """``ceil(fraction * total)`` robust to float round-off."""
    return min(total, max(0, math.ceil(fraction * total - _EPS)))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + _EPS))
