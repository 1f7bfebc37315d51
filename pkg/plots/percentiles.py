"""Percentile computation matching the harness reference implementation.

Linear interpolation at rank (n-1) * q / 100; must agree with the harness on
the shared golden vectors to 1e-12.
"""

from __future__ import annotations

import math


def percentile(values, q: float) -> float:
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("empty sample")
    h = (len(v) - 1) * q / 100.0
    lo = int(math.floor(h))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])
