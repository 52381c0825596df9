"""Exact ground truth at desk scale plus reproducible generators.

The dynamic programs here are oracles, not product paths: they are capped at
sizes where exactness is cheap and are used to certify the fast pipeline.
Cost ties always break toward the leftmost root so oracle output is
deterministic.  All methods share one prefix-sum mass table and combine child
costs right-folded (``cost = mass + (c1 + (c2 + ...))``), so independent
algorithms produce bit-identical costs for identical trees.

Randomness comes from numpy's Philox counter-based generator keyed by a
64-bit seed (splittable, documented, reproducible across platforms).
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterator

import numpy as np

from .builder import build_near_optimal
from .errors import PreconditionError
from .restructure import RestructureParams, restructure_with_height
from .tree import AccessDistribution, MultiwayTree, floor_log
from .weights import Scheme, SchemeParams, relative_drop_cap

__all__ = [
    "GeneratorConfig",
    "OracleResult",
    "binary_dp_reference",
    "build_height_restricted",
    "enumerate_optimal",
    "generate",
    "height_restricted_cost_curve",
    "optimal_height_restricted_dp",
    "optimal_tree_dp",
    "penalty_bound",
    "tree_count",
]

_SHAPES = (
    "path",
    "perfect",
    "caterpillar",
    "random_insertion",
    "random_dist_zipf",
    "random_dist_uniform",
)


@dataclass(frozen=True)
class OracleResult:
    tree: MultiwayTree
    cost: float
    table_dims: tuple[int, ...]


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


def _interval_masses(dist: AccessDistribution) -> np.ndarray:
    """Prefix sums over the normalized item sequence leaf0, key1, ..., leafn."""
    pn, qn = dist.normalized()
    items = np.empty(2 * dist.n + 1, dtype=np.float64)
    items[0::2] = qn
    items[1::2] = pn
    return np.concatenate(([0.0], np.cumsum(items)))


def _mass(prefix: np.ndarray, i: int, j: int) -> float:
    """Mass of the subtree over keys i..j (with leaves i-1..j)."""
    return float(prefix[2 * j + 1] - prefix[2 * (i - 1)])


class _Arena:
    """Mutable arena used while materializing an oracle tree."""

    def __init__(self):
        self.keys: list[tuple[int, ...]] = []
        self.children: list[tuple[int, ...]] = []

    def add(self, keys: tuple[int, ...], children: tuple[int, ...]) -> int:
        self.keys.append(keys)
        self.children.append(children)
        return len(self.keys) - 1

    def freeze(self, root: int, n: int, k: int) -> MultiwayTree:
        return MultiwayTree(self.keys, self.children, root, n, k)


# --------------------------------------------------------------------------
# unrestricted optimum
# --------------------------------------------------------------------------


def optimal_tree_dp(dist: AccessDistribution, k: int) -> OracleResult:
    """Minimum-path-length k-ary tree over the key set.

    Binary uses the classic quadratic-time root-window speedup; k > 2 uses a
    memoized interval/child-count recursion.
    """
    if k < 2:
        raise PreconditionError("branching factor must be at least 2")
    n = dist.n
    if k == 2:
        if n > 2000:
            raise PreconditionError("binary optimum oracle is capped at n = 2000")
        return _binary_dp(dist, root_windows=True)
    if n > 200:
        raise PreconditionError("k-ary optimum oracle is capped at n = 200")
    return _kary_dp(dist, k)


def binary_dp_reference(dist: AccessDistribution) -> OracleResult:
    """Plain cubic binary DP without the root-window speedup (cross-check)."""
    if dist.n > 200:
        raise PreconditionError("reference DP is capped at n = 200")
    return _binary_dp(dist, root_windows=False)


def _binary_dp(dist: AccessDistribution, root_windows: bool) -> OracleResult:
    n = dist.n
    prefix = _interval_masses(dist)
    cost = [[0.0] * (n + 2) for _ in range(n + 2)]
    best_root = [[0] * (n + 2) for _ in range(n + 2)]
    for i in range(1, n + 1):
        cost[i][i] = _mass(prefix, i, i)
        best_root[i][i] = i
    for length in range(2, n + 1):
        for i in range(1, n - length + 2):
            j = i + length - 1
            lo = best_root[i][j - 1] if root_windows else i
            hi = best_root[i + 1][j] if root_windows else j
            row_i = cost[i]
            best = math.inf
            arg = lo
            for r in range(lo, hi + 1):
                c = row_i[r - 1] + cost[r + 1][j]
                if c < best:
                    best = c
                    arg = r
            cost[i][j] = _mass(prefix, i, j) + best
            best_root[i][j] = arg

    arena = _Arena()
    root = _emit_binary(arena, best_root, 1, n)
    tree = arena.freeze(root, n, 2)
    return OracleResult(tree=tree, cost=cost[1][n], table_dims=(n + 2, n + 2))


def _emit_binary(arena: _Arena, best_root: list[list[int]], i0: int, j0: int) -> int:
    """Materialize the tree picked by a binary root table (iterative)."""
    order: list[tuple[int, int]] = []
    stack = [(i0, j0)]
    while stack:
        i, j = stack.pop()
        if i > j:
            continue
        order.append((i, j))
        r = best_root[i][j]
        stack.append((i, r - 1))
        stack.append((r + 1, j))
    handles: dict[tuple[int, int], int] = {}
    for i, j in reversed(order):
        r = best_root[i][j]
        left = handles[(i, r - 1)] if r - 1 >= i else ~(i - 1)
        right = handles[(r + 1, j)] if r + 1 <= j else ~r
        handles[(i, j)] = arena.add((r,), (left, right))
    return handles[(i0, j0)]


def _kary_dp(dist: AccessDistribution, k: int) -> OracleResult:
    n = dist.n
    prefix = _interval_masses(dist)
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 10 * n + 1000))

    @lru_cache(maxsize=None)
    def opt(i: int, j: int) -> float:
        if i > j:
            return 0.0
        best = math.inf
        for c in range(2, min(k, j - i + 2) + 1):
            v = parts(i, j, c)
            if v < best:
                best = v
        return _mass(prefix, i, j) + best

    @lru_cache(maxsize=None)
    def parts(i: int, j: int, c: int) -> float:
        """Best split of keys i..j into exactly c child subtrees."""
        if c == 1:
            return opt(i, j)
        best = math.inf
        for s in range(i, j - c + 3):
            v = opt(i, s - 1) + parts(s + 1, j, c - 1)
            if v < best:
                best = v
        return best

    arena = _Arena()

    def emit(i: int, j: int) -> int:
        target = opt(i, j) - _mass(prefix, i, j)
        c_chosen = next(
            c for c in range(2, min(k, j - i + 2) + 1) if parts(i, j, c) == target
        )
        keys: list[int] = []
        children: list[int] = []
        a, c = i, c_chosen
        while c > 1:
            val = parts(a, j, c)
            for s in range(a, j - c + 3):
                if opt(a, s - 1) + parts(s + 1, j, c - 1) == val:
                    children.append(emit(a, s - 1) if s - 1 >= a else ~(a - 1))
                    keys.append(s)
                    a = s + 1
                    c -= 1
                    break
            else:  # pragma: no cover - memoized values always reproduce
                raise AssertionError("failed to reproduce DP split")
        children.append(emit(a, j) if j >= a else ~(a - 1))
        return arena.add(tuple(keys), tuple(children))

    root = emit(1, n)
    tree = arena.freeze(root, n, k)
    return OracleResult(tree=tree, cost=opt(1, n), table_dims=(n + 1, n + 1, k))


# --------------------------------------------------------------------------
# height-restricted optimum (binary)
# --------------------------------------------------------------------------


def _height_dp_layers(
    dist: AccessDistribution, h_max: int, keep_roots: bool
) -> tuple[dict[int, float], dict[int, np.ndarray]]:
    """Layered height-bounded DP, vectorized over intervals of equal length.

    Convention: layer C has C[i, j] = best cost over keys i+1..j with subtree
    leaf depth <= layer height; empty intervals (j <= i) cost 0.  Returns the
    root-interval cost per height and, optionally, the root-choice tables
    needed to materialize a tree.
    """
    n = dist.n
    prefix = _interval_masses(dist)
    wmass = np.zeros((n + 1, n + 1))
    for length in range(1, n + 1):
        i = np.arange(0, n - length + 1)
        j = i + length
        wmass[i, j] = prefix[2 * j + 1] - prefix[2 * i]

    def empty_layer() -> np.ndarray:
        c = np.full((n + 1, n + 1), math.inf)
        for i in range(n + 1):
            c[i, : i + 1] = 0.0
        return c

    curve: dict[int, float] = {}
    roots: dict[int, np.ndarray] = {}
    prev = empty_layer()  # height 0: only empty intervals are representable
    for h in range(1, h_max + 1):
        cur = empty_layer()
        arg = np.zeros((n + 1, n + 1), dtype=np.int16) if keep_roots else None
        for length in range(1, n + 1):
            i = np.arange(0, n - length + 1)
            j = i + length
            best = np.full(len(i), math.inf)
            argr = np.zeros(len(i), dtype=np.int16)
            for offset in range(length):
                r = i + offset + 1
                cand = prev[i, r - 1] + prev[r, j]
                better = cand < best
                best[better] = cand[better]
                argr[better] = r[better]
            cur[i, j] = wmass[i, j] + best
            if arg is not None:
                arg[i, j] = argr
        curve[h] = float(cur[0, n])
        if arg is not None:
            roots[h] = arg
        prev = cur
    return curve, roots


def optimal_height_restricted_dp(
    dist: AccessDistribution, h: int, k: int = 2
) -> OracleResult:
    """Minimum-path-length binary tree whose leaves stay at depth <= h.

    Equals the unrestricted optimum whenever h is at least that optimum's
    height; cost is non-increasing in h.
    """
    if k != 2:
        raise PreconditionError("the height-restricted oracle supports k = 2 only")
    n = dist.n
    if n > 500:
        raise PreconditionError("height-restricted oracle is capped at n = 500")
    min_h = math.ceil(math.log2(n + 1))
    if h < min_h:
        raise PreconditionError(f"height {h} is infeasible: n={n} needs at least {min_h}")
    h_eff = min(h, n)
    curve, roots = _height_dp_layers(dist, h_eff, keep_roots=True)
    arena = _Arena()
    root = _emit_height_restricted(arena, roots, n, h_eff)
    tree = arena.freeze(root, n, 2)
    return OracleResult(tree=tree, cost=curve[h_eff], table_dims=(h_eff, n + 1, n + 1))


def _emit_height_restricted(
    arena: _Arena, roots: dict[int, np.ndarray], n: int, h: int
) -> int:
    order: list[tuple[int, int, int]] = []
    stack = [(0, n, h)]
    while stack:
        i, j, hh = stack.pop()
        if j <= i:
            continue
        order.append((i, j, hh))
        r = int(roots[hh][i, j])
        stack.append((i, r - 1, hh - 1))
        stack.append((r, j, hh - 1))
    handles: dict[tuple[int, int], int] = {}
    for i, j, hh in reversed(order):
        r = int(roots[hh][i, j])
        left = handles[(i, r - 1)] if r - 1 > i else ~i
        right = handles[(r, j)] if j > r else ~r
        handles[(i, j)] = arena.add((r,), (left, right))
    return handles[(0, n)]


def height_restricted_cost_curve(dist: AccessDistribution, h_max: int) -> dict[int, float]:
    """Optimal binary cost for every height bound 1..min(h_max, n) in one sweep."""
    curve, _ = _height_dp_layers(dist, min(h_max, dist.n), keep_roots=False)
    return curve


# --------------------------------------------------------------------------
# exhaustive enumeration
# --------------------------------------------------------------------------


def _root_choices(i: int, j: int, k: int) -> Iterator[tuple[tuple[int, ...], list[tuple[int, int]]]]:
    """Every root-node key selection: 1..k-1 separators out of keys i..j."""
    for t in range(1, min(k - 1, j - i + 1) + 1):
        for combo in combinations(range(i, j + 1), t):
            splits = []
            a = i
            for s in combo:
                splits.append((a, s - 1))
                a = s + 1
            splits.append((a, j))
            yield combo, splits


def enumerate_optimal(dist: AccessDistribution, k: int) -> OracleResult:
    """Exhaustive minimum over every valid k-ary tree shape (n <= 12).

    Deliberately memo-free so it remains independent of the dynamic programs
    it certifies.
    """
    n = dist.n
    if n > 12:
        raise PreconditionError("exhaustive enumeration is capped at n = 12")
    if k < 2:
        raise PreconditionError("branching factor must be at least 2")
    prefix = _interval_masses(dist)
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 10 * n + 1000))
    arena = _Arena()

    def best(i: int, j: int) -> tuple[float, int]:
        if i > j:
            return 0.0, ~(i - 1)
        best_cost = math.inf
        best_node = None
        for keys, splits in _root_choices(i, j, k):
            acc = 0.0
            children: list[int] = []
            for a, b in reversed(splits):
                c, handle = best(a, b)
                acc = c + acc
                children.append(handle)
            children.reverse()
            if acc < best_cost:
                best_cost = acc
                best_node = (keys, tuple(children))
        assert best_node is not None
        return _mass(prefix, i, j) + best_cost, arena.add(*best_node)

    cost, root = best(1, n)
    keys, children, new_root = _compact(arena, root)
    tree = MultiwayTree(keys, children, new_root, n, k)
    return OracleResult(tree=tree, cost=cost, table_dims=(n,))


def _compact(arena: _Arena, root: int) -> tuple[list, list, int]:
    """Copy only the winning tree out of an arena full of candidates."""
    order: list[int] = []
    seen = set()
    stack = [root]
    while stack:
        h = stack.pop()
        if h in seen:
            continue
        seen.add(h)
        order.append(h)
        for c in arena.children[h]:
            if c >= 0:
                stack.append(c)
    mapping: dict[int, int] = {}
    keys: list[tuple[int, ...]] = []
    children: list[tuple[int, ...]] = []
    for h in reversed(order):
        ch = tuple(c if c < 0 else mapping[c] for c in arena.children[h])
        keys.append(arena.keys[h])
        children.append(ch)
        mapping[h] = len(keys) - 1
    return keys, children, mapping[root]


def tree_count(n: int, k: int) -> int:
    """Number of valid k-ary search trees on n keys (enumeration self-check)."""
    if n > 14:
        raise PreconditionError("tree counting is capped at n = 14")

    @lru_cache(maxsize=None)
    def count(span: int) -> int:
        if span == 0:
            return 1
        total = 0
        for t in range(1, min(k - 1, span) + 1):
            for combo in combinations(range(span), t):
                prod = 1
                a = 0
                for s in combo:
                    prod *= count(s - a)
                    a = s + 1
                prod *= count(span - a)
                total += prod
        return total

    return count(n)


# --------------------------------------------------------------------------
# height-penalty applications
# --------------------------------------------------------------------------


def penalty_bound(p_star: float, n: int, k: int, h: int, epsilon: float) -> float:
    """Upper bound on the optimal height-h path length given the optimum p_star."""
    m = floor_log(n, k) + 1
    if h < m:
        raise PreconditionError(f"height budget {h} below the floor {m}")
    return p_star + relative_drop_cap(max(1.0, p_star - h + m), k, epsilon)


def build_height_restricted(
    dist: AccessDistribution, k: int, h: int, epsilon: float = 2.0
) -> MultiwayTree:
    """Near-optimal build followed by a height-budget restructure."""
    built = build_near_optimal(dist, k)
    params = RestructureParams(
        scheme=SchemeParams(k=k, mode=Scheme.RELATIVE, epsilon=epsilon), height_budget=h
    )
    return restructure_with_height(built.tree, params, profile=built.profile)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    k: int
    shape: str
    seed: int = 0

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise PreconditionError(f"unknown shape {self.shape!r}; choose from {_SHAPES}")
        if self.n < 1:
            raise PreconditionError("need n >= 1")
        if self.k < 2:
            raise PreconditionError("need k >= 2")


def generate(config: GeneratorConfig) -> MultiwayTree | AccessDistribution:
    """Deterministic corpus generator: same config, same bytes."""
    shape = config.shape
    if shape == "path":
        return _gen_path(config.n, config.k)
    if shape == "perfect":
        return _gen_balanced(config.n, config.k)
    if shape == "caterpillar":
        return _gen_caterpillar(config.n, config.k)
    if shape == "random_insertion":
        return _gen_random_insertion(config.n, config.k, config.seed)
    rng = np.random.Generator(np.random.Philox(config.seed))
    if shape == "random_dist_zipf":
        ranks = rng.permutation(2 * config.n + 1) + 1
        w = 1.0 / ranks.astype(np.float64)
    else:  # random_dist_uniform
        w = rng.random(2 * config.n + 1)
    return AccessDistribution(w[: config.n], w[config.n :])


def _gen_path(n: int, k: int) -> MultiwayTree:
    """Right-leaning chain of single-key nodes; key i sits at depth i-1."""
    arena = _Arena()
    prev = ~n
    for key in range(n, 0, -1):
        prev = arena.add((key,), (~(key - 1), prev))
    return arena.freeze(prev, n, k)


def _gen_balanced(n: int, k: int) -> MultiwayTree:
    """Height-minimal complete tree; exactly perfect when n = k**h - 1."""
    arena = _Arena()

    def build(i: int, j: int) -> int:
        span = j - i + 1
        if span <= k - 1:
            return arena.add(
                tuple(range(i, j + 1)), tuple(~(x - 1) for x in range(i, j + 2))
            )
        base, extra = divmod(span - (k - 1), k)
        keys = []
        children = []
        a = i
        for c in range(k):
            size = base + (1 if c < extra else 0)
            b = a + size - 1
            children.append(build(a, b) if b >= a else ~(a - 1))
            if c < k - 1:
                keys.append(b + 1)
                a = b + 2
        return arena.add(tuple(keys), tuple(children))

    root = build(1, n)
    return arena.freeze(root, n, k)


def _gen_caterpillar(n: int, k: int) -> MultiwayTree:
    """Binary spine on the even keys with single-key legs on the odd keys."""
    arena = _Arena()
    spine_keys = list(range(2, n + 1, 2))
    if not spine_keys:
        return _gen_path(n, k)
    last = spine_keys[-1]
    if last == n:
        node = ~n
    else:
        node = arena.add((n,), (~(n - 1), ~n))
    for key in reversed(spine_keys):
        leg = arena.add((key - 1,), (~(key - 2), ~(key - 1)))
        node = arena.add((key,), (leg, node))
    return arena.freeze(node, n, k)


def _gen_random_insertion(n: int, k: int, seed: int) -> MultiwayTree:
    """Insert a seeded permutation into a binary tree, then group levels.

    For k > 2 every floor(log2 k) consecutive binary levels merge into one
    k-ary node (at most 2**levels - 1 <= k - 1 keys per node).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    order = rng.permutation(n) + 1
    left = np.zeros(n + 1, dtype=np.int64)
    right = np.zeros(n + 1, dtype=np.int64)
    root = int(order[0])
    for key in order[1:]:
        key = int(key)
        node = root
        while True:
            if key < node:
                nxt = int(left[node])
                if nxt == 0:
                    left[node] = key
                    break
            else:
                nxt = int(right[node])
                if nxt == 0:
                    right[node] = key
                    break
            node = nxt

    group_levels = max(1, int(math.log2(k)))
    sys.setrecursionlimit(max(sys.getrecursionlimit(), 8 * n + 1000))
    arena = _Arena()

    def emit(top: int) -> int:
        keys: list[int] = []
        children: list[int] = []

        def walk(v: int, depth: int, empty_leaf: int) -> None:
            # an empty left child of v closes gap (pred(v), v) = leaf v-1;
            # an empty right child closes (v, succ(v)) = leaf v
            if v == 0:
                children.append(~empty_leaf)
                return
            if depth == group_levels:
                children.append(emit(v))
                return
            walk(int(left[v]), depth + 1, v - 1)
            keys.append(v)
            walk(int(right[v]), depth + 1, v)

        walk(top, 0, top - 1)
        return arena.add(tuple(keys), tuple(children))

    return arena.freeze(emit(root), n, k)
