"""Canonical text forms for trees and distributions.

Tree files look like ``{"k":2,"n":1,"root":{"children":[{"leaf":0},{"leaf":1}],"keys":[1]}}``
and distribution files like ``{"p":[0.5],"q":[0.25,0.25]}``.  The writer emits
object fields in sorted order, reals with 17 significant digits and a trailing
newline, so serialize(parse(text)) reproduces canonical text byte for byte.
The reader accepts arbitrary whitespace and field order.

Both directions use an explicit stack rather than recursion: a path-shaped
tree nests one object per level, and files with millions of levels must not
exhaust the interpreter stack.
"""
from __future__ import annotations

import re

import numpy as np

from .errors import ParseError
from .tree import AccessDistribution, MultiwayTree, validate

__all__ = ["dist_to_text", "parse_dist", "parse_tree", "tree_to_text"]

_TOKEN = re.compile(r'[ \t\r\n]*([{}\[\],:]|"(?:[^"\\]|\\.)*"|-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)')


class _Tokens:
    """Regex tokenizer over the JSON subset used by the canonical formats."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def next(self) -> tuple[str, int]:
        m = _TOKEN.match(self.text, self.pos)
        if m is None:
            at = self.pos + len(self.text[self.pos :]) - len(self.text[self.pos :].lstrip())
            if at >= len(self.text):
                raise ParseError("unexpected end of input", len(self.text))
            raise ParseError(f"unexpected character {self.text[at]!r}", at)
        self.pos = m.end()
        return m.group(1), m.start(1)

    def expect(self, token: str) -> int:
        tok, at = self.next()
        if tok != token:
            raise ParseError(f"expected {token!r}, found {tok!r}", at)
        return at

    def expect_end(self) -> None:
        rest = self.text[self.pos :].strip()
        if rest:
            raise ParseError("trailing content after document", self.pos)


def _parse_int(tokens: _Tokens) -> int:
    tok, at = tokens.next()
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, found {tok!r}", at) from None


def _parse_number_list(tokens: _Tokens) -> list[float]:
    tokens.expect("[")
    values: list[float] = []
    tok, at = tokens.next()
    if tok == "]":
        return values
    while True:
        try:
            values.append(float(tok))
        except ValueError:
            raise ParseError(f"expected a number, found {tok!r}", at) from None
        tok, at = tokens.next()
        if tok == "]":
            return values
        if tok != ",":
            raise ParseError(f"expected ',' or ']', found {tok!r}", at)
        tok, at = tokens.next()


def _parse_int_list(tokens: _Tokens) -> list[int]:
    return [int(v) for v in _parse_number_list(tokens)]


def parse_tree(text: str) -> MultiwayTree:
    """Parse canonical tree text; reject structurally invalid trees."""
    tokens = _Tokens(text)
    tokens.expect("{")
    k = n = None
    node_keys: list[tuple[int, ...]] = []
    node_children: list[tuple[int, ...]] = []
    root = None
    top_start = 0

    while True:
        tok, at = tokens.next()
        if tok == "}":
            break
        if not tok.startswith('"'):
            raise ParseError(f"expected a field name, found {tok!r}", at)
        name = tok[1:-1]
        tokens.expect(":")
        if name == "k":
            k = _parse_int(tokens)
        elif name == "n":
            n = _parse_int(tokens)
        elif name == "root":
            top_start = tokens.expect("{")
            root = _parse_node(tokens, node_keys, node_children, top_start)
        else:
            raise ParseError(f"unknown field {name!r}", at)
        tok, at = tokens.next()
        if tok == "}":
            break
        if tok != ",":
            raise ParseError(f"expected ',' or '}}', found {tok!r}", at)
    tokens.expect_end()

    if k is None or n is None or root is None:
        raise ParseError('tree file needs "k", "n" and "root" fields', 0)
    if root < 0:
        raise ParseError("root must be an internal node, not a leaf", top_start)
    try:
        tree = MultiwayTree(node_keys, node_children, root, n, k)
    except Exception as exc:
        raise ParseError(str(exc), top_start) from None
    result = validate(tree, k)
    if not result.ok:
        handle, reason = result.violations[0]
        raise ParseError(f"invalid tree (node {handle}): {reason}", top_start)
    return tree


def _parse_node(
    tokens: _Tokens,
    node_keys: list[tuple[int, ...]],
    node_children: list[tuple[int, ...]],
    start: int,
) -> int:
    """Parse one NODE object (the '{' is already consumed); return its child slot.

    Children are parsed with an explicit frame stack so nesting depth is
    unbounded.  Returns a non-negative arena handle for an internal node or
    ``~leaf_index`` for a leaf object.
    """
    # frame: [start_pos, keys|None, children|None, leaf|None, pending list or None]
    frames: list[list] = [[start, None, None, None]]
    result: int | None = None

    while frames:
        frame = frames[-1]
        tok, at = tokens.next()
        if tok == "}":
            frames.pop()
            f_start, keys, children, leaf = frame
            if leaf is not None:
                if keys is not None or children is not None:
                    raise ParseError("leaf object cannot carry keys or children", f_start)
                slot = ~leaf
            else:
                if keys is None or children is None:
                    raise ParseError('node object needs "keys" and "children"', f_start)
                node_keys.append(tuple(keys))
                node_children.append(tuple(children))
                slot = len(node_keys) - 1
            if frames:
                parent = frames[-1]
                parent[2].append(slot)
                # consume the separator inside the parent's children array
                tok, at = tokens.next()
                if tok == "]":
                    _finish_children(tokens, frames[-1])
                elif tok == ",":
                    brace_at = tokens.expect("{")
                    frames.append([brace_at, None, None, None])
                else:
                    raise ParseError(f"expected ',' or ']', found {tok!r}", at)
            else:
                result = slot
            continue
        if not tok.startswith('"'):
            raise ParseError(f"expected a field name, found {tok!r}", at)
        name = tok[1:-1]
        tokens.expect(":")
        if name == "leaf":
            frame[3] = _parse_int(tokens)
        elif name == "keys":
            frame[1] = _parse_int_list(tokens)
        elif name == "children":
            frame[2] = []
            tokens.expect("[")
            tok, at = tokens.next()
            if tok == "]":
                _finish_children(tokens, frame)
                continue
            if tok != "{":
                raise ParseError(f"expected a child object, found {tok!r}", at)
            frames.append([at, None, None, None])
            continue
        else:
            raise ParseError(f"unknown field {name!r}", at)
        tok, at = tokens.next()
        if tok == "}":
            tokens.pos = at  # reprocess the brace on the next loop turn
        elif tok != ",":
            raise ParseError(f"expected ',' or '}}', found {tok!r}", at)

    assert result is not None
    return result


def _finish_children(tokens: _Tokens, frame: list) -> None:
    """After a ']' closing a children array: consume ',' or push back '}'."""
    tok, at = tokens.next()
    if tok == "}":
        tokens.pos = at
    elif tok != ",":
        raise ParseError(f"expected ',' or '}}', found {tok!r}", at)


def tree_to_text(tree: MultiwayTree) -> str:
    """Serialize to canonical text (sorted fields, compact, trailing newline)."""
    parts: list[str] = [f'{{"k":{tree.k},"n":{tree.n},"root":']
    keys = tree.node_keys
    children = tree.node_children
    # stack of (handle, next child position); -1 position means "emit prologue"
    stack: list[tuple[int, int]] = [(tree.root, -1)]
    while stack:
        handle, pos = stack.pop()
        ch = children[handle]
        if pos == -1:
            parts.append('{"children":[')
            pos = 0
        while pos < len(ch):
            if pos > 0:
                parts.append(",")
            slot = ch[pos]
            if slot < 0:
                parts.append(f'{{"leaf":{~slot}}}')
                pos += 1
            else:
                stack.append((handle, pos + 1))
                stack.append((slot, -1))
                break
        else:
            parts.append('],"keys":[')
            parts.append(",".join(map(str, keys[handle])))
            parts.append("]}")
    parts.append("}\n")
    return "".join(parts)


def _format_real(v: float) -> str:
    return format(v, ".17g")


def dist_to_text(dist: AccessDistribution) -> str:
    p = ",".join(_format_real(v) for v in dist.p)
    q = ",".join(_format_real(v) for v in dist.q)
    return f'{{"p":[{p}],"q":[{q}]}}\n'


def parse_dist(text: str) -> AccessDistribution:
    tokens = _Tokens(text)
    tokens.expect("{")
    p = q = None
    while True:
        tok, at = tokens.next()
        if tok == "}":
            break
        if not tok.startswith('"'):
            raise ParseError(f"expected a field name, found {tok!r}", at)
        name = tok[1:-1]
        tokens.expect(":")
        if name == "p":
            p = _parse_number_list(tokens)
        elif name == "q":
            q = _parse_number_list(tokens)
        else:
            raise ParseError(f"unknown field {name!r}", at)
        tok, at = tokens.next()
        if tok == "}":
            break
        if tok != ",":
            raise ParseError(f"expected ',' or '}}', found {tok!r}", at)
    tokens.expect_end()
    if p is None or q is None:
        raise ParseError('distribution file needs "p" and "q" fields', 0)
    try:
        return AccessDistribution(np.asarray(p), np.asarray(q))
    except Exception as exc:
        raise ParseError(str(exc), 0) from None
