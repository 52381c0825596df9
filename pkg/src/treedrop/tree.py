"""Multiway search tree arena plus depth, path-length, entropy and drop machinery.

A k-ary search tree over keys 1..n is stored as an arena of internal nodes.
Each node holds an ascending tuple of key indices and a tuple of child slots.
A child slot is an ``int``: non-negative values are handles into the arena,
negative values encode the leaf with index ``~slot`` (so leaf ``i`` is stored
as ``~i``).  Leaves carry no keys; leaf ``i`` stands for an unsuccessful
search between key ``i`` and key ``i+1``.

Depth counts links: the root node has depth 0 and a leaf's depth is its
parent's depth plus one.  All objects here are immutable after construction
and every function is pure, so values can be shared freely across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import PreconditionError

__all__ = [
    "AccessDistribution",
    "DepthProfile",
    "DropReport",
    "InternalNode",
    "MultiwayTree",
    "ValidationResult",
    "depth_profile",
    "drop_report",
    "entropy",
    "floor_log",
    "is_leaf_slot",
    "leaf_slot",
    "path_length",
    "slot_leaf_index",
    "validate",
]

_EPS = 1e-12


def leaf_slot(index: int) -> int:
    """Encode leaf ``index`` as a child slot."""
    return ~index


def is_leaf_slot(slot: int) -> bool:
    return slot < 0


def slot_leaf_index(slot: int) -> int:
    """Decode the leaf index stored in a negative child slot."""
    return ~slot


def floor_log(x: float, k: int) -> int:
    """``floor(log_k(x))`` with a relative epsilon guard at power boundaries.

    Values within a factor ``1 + 1e-12`` of ``k**r`` are classified as
    ``k**r`` so that float noise around exact powers cannot shift the floor.
    """
    if x <= 0 or not math.isfinite(x):
        raise PreconditionError(f"floor_log needs a positive finite argument, got {x}")
    r = math.floor(math.log(x) / math.log(k))
    while k**r > x * (1.0 + _EPS):
        r -= 1
    while k ** (r + 1) <= x * (1.0 + _EPS):
        r += 1
    return r


class AccessDistribution:
    """Nonnegative access weights for n keys and n+1 leaves.

    ``p[i]`` weighs key ``i+1`` and ``q[i]`` weighs leaf ``i``.  Weights are
    raw (they need not sum to one); the probability of an element is its
    weight divided by ``total``.
    """

    __slots__ = ("p", "q", "total")

    def __init__(self, p: Sequence[float], q: Sequence[float]):
        p_arr = np.ascontiguousarray(p, dtype=np.float64)
        q_arr = np.ascontiguousarray(q, dtype=np.float64)
        if p_arr.ndim != 1 or q_arr.ndim != 1:
            raise PreconditionError("p and q must be one-dimensional")
        if len(p_arr) < 1 or len(q_arr) != len(p_arr) + 1:
            raise PreconditionError(
                f"need n>=1 key weights and n+1 leaf weights, got {len(p_arr)} and {len(q_arr)}"
            )
        if not (np.isfinite(p_arr).all() and np.isfinite(q_arr).all()):
            raise PreconditionError("weights must be finite")
        if (p_arr < 0).any() or (q_arr < 0).any():
            raise PreconditionError("weights must be nonnegative")
        total = float(p_arr.sum() + q_arr.sum())
        if total <= 0.0:
            raise PreconditionError("all-zero distribution")
        p_arr.setflags(write=False)
        q_arr.setflags(write=False)
        object.__setattr__(self, "p", p_arr)
        object.__setattr__(self, "q", q_arr)
        object.__setattr__(self, "total", total)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("AccessDistribution is immutable")

    @property
    def n(self) -> int:
        return len(self.p)

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (p, q) scaled to sum to one."""
        return self.p / self.total, self.q / self.total

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AccessDistribution)
            and np.array_equal(self.p, other.p)
            and np.array_equal(self.q, other.q)
        )

    def __repr__(self) -> str:
        return f"AccessDistribution(n={self.n}, total={self.total!r})"


class InternalNode(NamedTuple):
    keys: tuple[int, ...]
    children: tuple[int, ...]


class MultiwayTree:
    """Immutable arena-backed k-ary search tree on keys 1..n."""

    __slots__ = ("node_keys", "node_children", "root", "n", "k")

    def __init__(
        self,
        node_keys: Sequence[tuple[int, ...]],
        node_children: Sequence[tuple[int, ...]],
        root: int,
        n: int,
        k: int,
        copy: bool = True,
    ):
        if len(node_keys) != len(node_children):
            raise PreconditionError("keys/children arenas differ in length")
        if not node_keys:
            raise PreconditionError("tree must contain at least one node")
        if not 0 <= root < len(node_keys):
            raise PreconditionError(f"root handle {root} out of range")
        if n < 1:
            raise PreconditionError("tree must hold at least one key")
        if k < 2:
            raise PreconditionError("branching factor must be at least 2")
        if copy:
            node_keys = tuple(map(tuple, node_keys))
            node_children = tuple(map(tuple, node_children))
        else:  # caller vouches for tuples throughout
            node_keys = tuple(node_keys)
            node_children = tuple(node_children)
        object.__setattr__(self, "node_keys", node_keys)
        object.__setattr__(self, "node_children", node_children)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("MultiwayTree is immutable")

    def __len__(self) -> int:
        return len(self.node_keys)

    def node(self, handle: int) -> InternalNode:
        return InternalNode(self.node_keys[handle], self.node_children[handle])

    def key_count(self, handle: int) -> int:
        return len(self.node_keys[handle])

    def inorder(self) -> Iterator[tuple[str, int]]:
        """Yield ("leaf", i) / ("key", i) events in symmetric order, iteratively."""
        keys = self.node_keys
        children = self.node_children
        # stack entries: (handle, next child position)
        stack = [(self.root, 0)]
        while stack:
            handle, pos = stack.pop()
            ch = children[handle]
            ks = keys[handle]
            while pos < len(ch):
                child = ch[pos]
                if pos > 0:
                    yield "key", ks[pos - 1]
                if child < 0:
                    yield "leaf", ~child
                    pos += 1
                else:
                    stack.append((handle, pos + 1))
                    stack.append((child, 0))
                    break
            else:
                continue

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiwayTree):
            return NotImplemented
        return (
            self.n == other.n
            and self.k == other.k
            and self.root == other.root
            and self.node_keys == other.node_keys
            and self.node_children == other.node_children
        )

    def __repr__(self) -> str:
        return f"MultiwayTree(n={self.n}, k={self.k}, nodes={len(self.node_keys)})"


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[tuple[int, str], ...]  # (node handle, reason); -1 for whole-tree issues


def validate(tree: MultiwayTree, k: int | None = None) -> ValidationResult:
    """Check every structural invariant for branching factor ``k``.

    Violations are returned as data rather than raised: a malformed tree is
    an answer, not a fault.
    """
    k = tree.k if k is None else k
    violations: list[tuple[int, str]] = []
    keys = tree.node_keys
    children = tree.node_children
    size = len(keys)

    for handle in range(size):
        j = len(keys[handle])
        if j < 1:
            violations.append((handle, "node holds no keys"))
        if j > k - 1:
            violations.append((handle, f"keys > k-1 ({j} > {k - 1})"))
        if len(children[handle]) != j + 1:
            violations.append(
                (handle, f"children != keys+1 ({len(children[handle])} != {j + 1})")
            )
        if any(keys[handle][i] >= keys[handle][i + 1] for i in range(j - 1)):
            violations.append((handle, "node keys not strictly increasing"))

    # Reachability / cycle check, then a full symmetric-order sweep.
    seen = np.zeros(size, dtype=bool)
    stack = [tree.root]
    cycle = False
    while stack:
        h = stack.pop()
        if h >= size or h < 0:
            violations.append((-1, f"child handle {h} out of range"))
            continue
        if seen[h]:
            cycle = True
            violations.append((h, "node reachable twice (cycle or shared subtree)"))
            continue
        seen[h] = True
        for c in children[h]:
            if c >= 0:
                stack.append(c)
    if not seen.all():
        unreachable = int((~seen).sum())
        violations.append((-1, f"{unreachable} unreachable node(s) in arena"))

    if not cycle and seen.all():
        expected_key = 1
        expected_leaf = 0
        for kind, idx in tree.inorder():
            if kind == "key":
                if idx != expected_key:
                    violations.append((-1, f"key {idx} out of order (expected {expected_key})"))
                    break
                expected_key += 1
            else:
                if idx != expected_leaf:
                    violations.append((-1, f"leaf {idx} out of order (expected {expected_leaf})"))
                    break
                expected_leaf += 1
        else:
            if expected_key != tree.n + 1:
                violations.append((-1, f"saw {expected_key - 1} keys, expected {tree.n}"))
            elif expected_leaf != tree.n + 1:
                violations.append((-1, f"saw {expected_leaf} leaves, expected {tree.n + 1}"))

    return ValidationResult(ok=not violations, violations=tuple(violations))


@dataclass(frozen=True)
class DepthProfile:
    """Per-key and per-leaf link depths plus the per-depth key census."""

    key_depth: np.ndarray  # key i at key_depth[i-1]
    leaf_depth: np.ndarray  # leaf i at leaf_depth[i]
    census: np.ndarray  # census[d] = number of keys at depth d

    @property
    def n(self) -> int:
        return len(self.key_depth)

    @property
    def height(self) -> int:
        return int(self.leaf_depth.max())

    def census_map(self) -> dict[int, int]:
        return {d: int(c) for d, c in enumerate(self.census) if c}


def depth_profile(tree: MultiwayTree) -> DepthProfile:
    """Compute link depths of every key and leaf in one traversal."""
    n = tree.n
    key_depth = np.empty(n, dtype=np.int64)
    leaf_depth = np.empty(n + 1, dtype=np.int64)
    node_keys = tree.node_keys
    node_children = tree.node_children
    stack = [(tree.root, 0)]
    pop = stack.pop
    push = stack.append
    while stack:
        handle, d = pop()
        for key in node_keys[handle]:
            key_depth[key - 1] = d
        d1 = d + 1
        for c in node_children[handle]:
            if c < 0:
                leaf_depth[~c] = d1
            else:
                push((c, d1))
    census = np.bincount(key_depth)
    return DepthProfile(key_depth=key_depth, leaf_depth=leaf_depth, census=census)


def path_length(
    tree: MultiwayTree,
    dist: AccessDistribution,
    profile: DepthProfile | None = None,
) -> float:
    """Expected number of node visits per search under ``dist``.

    A successful search for a key at depth d visits d+1 nodes; an
    unsuccessful search ending at a leaf of depth d visits d nodes.
    """
    if dist.n != tree.n:
        raise PreconditionError(f"distribution sized {dist.n} does not fit tree with n={tree.n}")
    if profile is None:
        profile = depth_profile(tree)
    visits = float(dist.p @ (profile.key_depth + 1)) + float(dist.q @ profile.leaf_depth)
    return visits / dist.total


def entropy(dist: AccessDistribution) -> float:
    """Base-2 entropy of the normalized distribution, with 0*log(1/0) = 0."""
    w = np.concatenate([dist.p, dist.q]) / dist.total
    nz = w[w > 0]
    return float(-(nz * np.log2(nz)).sum())


@dataclass(frozen=True)
class DropReport:
    """Per-element depth increases between an original and a restructured tree."""

    key_drop: np.ndarray
    leaf_drop: np.ndarray
    max_key_drop: int
    max_leaf_drop: int
    key_histogram: dict[int, int]
    leaf_histogram: dict[int, int]
    path_length_original: float
    path_length_restructured: float


def _histogram(drops: np.ndarray) -> dict[int, int]:
    values, counts = np.unique(drops, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def drop_report(
    original: MultiwayTree,
    restructured: MultiwayTree,
    dist: AccessDistribution,
    original_profile: DepthProfile | None = None,
    restructured_profile: DepthProfile | None = None,
) -> DropReport:
    """Drops (new depth minus old depth) for every key and leaf."""
    if original.n != restructured.n:
        raise PreconditionError(
            f"key sets differ: n={original.n} vs n={restructured.n}"
        )
    if dist.n != original.n:
        raise PreconditionError("distribution does not fit the trees")
    prof_t = original_profile or depth_profile(original)
    prof_r = restructured_profile or depth_profile(restructured)
    key_drop = prof_r.key_depth - prof_t.key_depth
    leaf_drop = prof_r.leaf_depth - prof_t.leaf_depth
    return DropReport(
        key_drop=key_drop,
        leaf_drop=leaf_drop,
        max_key_drop=int(key_drop.max()),
        max_leaf_drop=int(leaf_drop.max()),
        key_histogram=_histogram(key_drop),
        leaf_histogram=_histogram(leaf_drop),
        path_length_original=path_length(original, dist, prof_t),
        path_length_restructured=path_length(restructured, dist, prof_r),
    )
