"""Depth-derived weight schemes that steer the near-optimal rebuild.

Each scheme turns a source tree's depth profile into an access distribution
whose weights are bounded below by a constant floor.  The floor is what caps
``total/weight`` and therefore the rebuilt tree's height; the depth-sensitive
term is what caps each element's drop.  Unqualified logarithms inside weight
formulas are base 2, matching the entropy definition; ``log_k`` is explicit.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .tree import AccessDistribution, DepthProfile

__all__ = [
    "Scheme",
    "SchemeParams",
    "WeightingOutput",
    "alphabetic_weights",
    "hybrid_weights",
    "relative_drop_cap",
    "relative_weights",
    "scheme_weights",
    "solve_depth_cutoff",
    "worstcase_weights",
]

_REL_EPS = 1e-12


class Scheme(str, enum.Enum):
    ALPHABETIC = "alphabetic"
    WORST_CASE = "worstcase"
    RELATIVE = "relative"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class SchemeParams:
    k: int
    mode: Scheme
    epsilon: float = 2.0

    def __post_init__(self):
        if self.k < 2:
            raise PreconditionError("branching factor must be at least 2")
        if not 1.0 < self.epsilon <= 2.0:
            raise PreconditionError(f"epsilon must lie in (1, 2], got {self.epsilon}")


@dataclass(frozen=True)
class WeightingOutput:
    """A scheme's distribution plus the quantities its guarantees quote."""

    dist: AccessDistribution
    total: float
    key_kraft_sum: float | None = None  # sum of k**-depth over keys (worst-case scheme)
    cutoff_depth: int | None = None  # integer threshold depth (hybrid scheme)


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise AssertionError(message)


def alphabetic_weights(profile: DepthProfile, n: int, k: int) -> WeightingOutput:
    """Leaf weights max(k**-depth, 1/((k-1)n)); keys get zero weight.

    The floor is clamped at 1/k, the largest weight a leaf can carry; this
    only matters at n = 1, where an unclamped floor would breach the Kraft
    cap on the total.
    """
    if n < 1 or k < 2:
        raise PreconditionError("need n >= 1 and k >= 2")
    depths = profile.leaf_depth.astype(np.float64)
    floor = min(1.0 / ((k - 1) * n), 1.0 / k)
    w = np.maximum(np.power(float(k), -depths), floor)
    dist = AccessDistribution(np.zeros(n), w)
    _check(dist.total < k / (k - 1), f"alphabetic total {dist.total} breaches k/(k-1)")
    return WeightingOutput(dist=dist, total=dist.total)


def worstcase_weights(profile: DepthProfile, n: int, k: int) -> WeightingOutput:
    """Key weights max(k**-depth, S/((k-1)n)) where S sums k**-depth over keys."""
    if n < 1 or k < 2:
        raise PreconditionError("need n >= 1 and k >= 2")
    inv_powers = np.power(float(k), -profile.key_depth.astype(np.float64))
    kraft = float(inv_powers.sum())
    w = np.maximum(inv_powers, kraft / ((k - 1) * n))
    dist = AccessDistribution(w, np.zeros(n + 1))
    _check(
        dist.total < (k / (k - 1)) * kraft,
        f"worst-case total {dist.total} breaches (k/(k-1)) * {kraft}",
    )
    return WeightingOutput(dist=dist, total=dist.total, key_kraft_sum=kraft)


def _relative_terms(profile: DepthProfile, epsilon: float) -> np.ndarray:
    d = profile.key_depth.astype(np.float64)
    census = profile.census[profile.key_depth].astype(np.float64)
    return 1.0 / (census * (d + 1.0) * np.log2(d + 2.0) ** (1.0 + epsilon))


def relative_weights(profile: DepthProfile, n: int, params: SchemeParams) -> WeightingOutput:
    """Key weights shrink with depth and depth census, floored by a constant."""
    if n < 1:
        raise PreconditionError("need n >= 1")
    k, eps = params.k, params.epsilon
    floor = (1.0 + eps) / (eps * n * (k - 1))
    w = np.maximum(_relative_terms(profile, eps), floor)
    dist = AccessDistribution(w, np.zeros(n + 1))
    cap = k * (1.0 + eps) / ((k - 1) * eps)
    _check(dist.total < cap, f"relative total {dist.total} breaches {cap}")
    return WeightingOutput(dist=dist, total=dist.total)


def solve_depth_cutoff(n: int, k: int, epsilon: float) -> int:
    """Largest integer d >= 0 with (d+1) * log2(d+2)**(1+eps) <= log_k(n).

    The left side is strictly increasing, so a linear scan suffices.  Returns
    -1 when even d = 0 overshoots (the depth-sensitive case is then empty).
    """
    if n < 1:
        raise PreconditionError("need n >= 1")
    target = math.log(n) / math.log(k)
    d = -1
    while True:
        cand = d + 1
        lhs = (cand + 1) * math.log2(cand + 2) ** (1.0 + epsilon)
        if lhs <= target * (1.0 + _REL_EPS) + _REL_EPS:
            d = cand
        else:
            return d


def hybrid_weights(profile: DepthProfile, n: int, params: SchemeParams) -> WeightingOutput:
    """Three-band key weights: depth-sensitive, mid-range, constant floor.

    The band split compares the depth-sensitive and mid-range terms directly,
    which realizes the real-valued cutoff depth exactly; rounding the cutoff
    to an integer first would misweight keys in the fractional gap and void
    the two-armed drop cap.  ``cutoff_depth`` still reports the integer form.
    """
    if n < 1:
        raise PreconditionError("need n >= 1")
    k, eps = params.k, params.epsilon
    cutoff = solve_depth_cutoff(n, k, eps)
    log_k_n = math.log(n) / math.log(k)
    floor = (1.0 + 2.0 * eps) / (eps * n * (k - 1))

    d1 = profile.key_depth.astype(np.float64) + 1.0
    in_range = d1 <= log_k_n * (1.0 + _REL_EPS) + _REL_EPS
    census = profile.census[profile.key_depth].astype(np.float64)

    w = np.full(n, floor)
    if in_range.any():
        relative = _relative_terms(profile, eps)[in_range]
        mid = 1.0 / (census[in_range] * log_k_n)
        w[in_range] = np.maximum(np.maximum(relative, mid), floor)
    dist = AccessDistribution(w, np.zeros(n + 1))
    cap = k * (1.0 + 2.0 * eps) / ((k - 1) * eps)
    # the chain bounding the total is exactly tight at k=2, so allow float slack
    _check(dist.total <= cap + 1e-9, f"hybrid total {dist.total} breaches {cap}")
    return WeightingOutput(dist=dist, total=dist.total, cutoff_depth=cutoff)


def scheme_weights(profile: DepthProfile, n: int, params: SchemeParams) -> WeightingOutput:
    if params.mode is Scheme.ALPHABETIC:
        return alphabetic_weights(profile, n, params.k)
    if params.mode is Scheme.WORST_CASE:
        return worstcase_weights(profile, n, params.k)
    if params.mode is Scheme.RELATIVE:
        return relative_weights(profile, n, params)
    if params.mode is Scheme.HYBRID:
        return hybrid_weights(profile, n, params)
    raise PreconditionError(f"unknown scheme {params.mode!r}")


def relative_drop_cap(y: float, k: int, epsilon: float) -> float:
    """The drop budget for an element whose weight term used depth y - 1.

    log_k(y) + (1+eps) * log_k(log2(y+1)) + log_k((1+eps)/eps) + 1, defined
    for y >= 1 and strictly increasing.
    """
    if y < 1.0:
        raise PreconditionError(f"cap argument must be >= 1, got {y}")
    log_k = math.log(k)
    return (
        math.log(y) / log_k
        + (1.0 + epsilon) * math.log(math.log2(y + 1.0)) / log_k
        + math.log((1.0 + epsilon) / epsilon) / log_k
        + 1.0
    )
