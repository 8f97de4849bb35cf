"""Tiny expression language for functions of replica overlaps.

Examples: ``"1"``, ``"R12"``, ``"clamp(R12)"``, ``"R12*R13 - 0.5*R_1_2**2"``.
An overlap symbol is ``R`` followed by two single-digit replica labels, or
``R_a_b`` for multi-digit labels.  Labels are 1-based.  ``clamp(e)`` clips
to ``[-1, 1]``; ``clamp(e, lo, hi)`` takes explicit bounds.
"""

from __future__ import annotations

import ast
import re
from collections import Counter

import numpy as np

_SYMBOL = re.compile(r"^R(?:(\d)(\d)|_(\d+)_(\d+))$")


class FSpecError(ValueError):
    pass


def _pair(name):
    m = _SYMBOL.match(name)
    if not m:
        raise FSpecError(f"unknown symbol {name!r}; overlaps are written R12 or R_1_2")
    a, b = (m.group(1), m.group(2)) if m.group(1) else (m.group(3), m.group(4))
    a, b = int(a), int(b)
    if a < 1 or b < 1:
        raise FSpecError("replica labels are 1-based")
    return (min(a, b), max(a, b))


def _literal(node) -> float:
    """Numeric literal, optionally signed."""
    sign = 1.0
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
        node = node.operand
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return sign * float(node.value)
    raise FSpecError("clamp bounds must be numeric literals")


class FSpec:
    """A parsed overlap expression."""

    def __init__(self, text: str):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise FSpecError(f"cannot parse {text!r}: {exc.msg}") from None
        self._tree = tree.body
        self._pairs = set()
        self._has_clamp = False
        self._check(self._tree)

    def __repr__(self):
        return f"FSpec({self.text!r})"

    def _check(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            self._pairs.add(_pair(node.id))
            return
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return self._check(node.operand)
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult)):
            self._check(node.left)
            return self._check(node.right)
        if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Pow):
            if not (isinstance(node.right, ast.Constant) and isinstance(node.right.value, int)
                    and node.right.value >= 0):
                raise FSpecError("exponents must be non-negative integer literals")
            return self._check(node.left)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id == "clamp" and not node.keywords
                and len(node.args) in (1, 3)):
            self._has_clamp = True
            for arg in node.args[1:]:
                _literal(arg)
            return self._check(node.args[0])
        raise FSpecError(f"unsupported construct in {self.text!r}")

    @property
    def pairs(self) -> set:
        return set(self._pairs)

    @property
    def replicas(self) -> set:
        return {lab for pair in self._pairs for lab in pair}

    @property
    def is_polynomial(self) -> bool:
        return not self._has_clamp

    def evaluate(self, overlaps) -> np.ndarray:
        """Evaluate on an overlap array ``Q[..., a, b]`` indexed with 0-based labels."""
        q = np.asarray(overlaps, dtype=float)
        return np.broadcast_to(self._eval(self._tree, q), q.shape[:-2]).astype(float)

    def _eval(self, node, q):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            a, b = _pair(node.id)
            if max(a, b) > q.shape[-1]:
                raise FSpecError(f"{node.id} needs {max(a, b)} replicas, have {q.shape[-1]}")
            return q[..., a - 1, b - 1]
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, q)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.BinOp):
            left = self._eval(node.left, q)
            if isinstance(node.op, ast.Pow):
                return left ** node.right.value
            right = self._eval(node.right, q)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            return left * right
        lo, hi = -1.0, 1.0
        if len(node.args) == 3:
            lo, hi = _literal(node.args[1]), _literal(node.args[2])
        return np.clip(self._eval(node.args[0], q), lo, hi)

    def expand(self) -> dict:
        """Monomial expansion ``{sorted tuple of pairs: coefficient}``."""
        if self._has_clamp:
            raise FSpecError(f"{self.text!r} uses clamp and has no polynomial expansion")
        poly = self._expand(self._tree)
        return {k: v for k, v in poly.items() if v != 0.0}

    def _expand(self, node) -> Counter:
        if isinstance(node, ast.Constant):
            return Counter({(): float(node.value)})
        if isinstance(node, ast.Name):
            return Counter({(_pair(node.id),): 1.0})
        if isinstance(node, ast.UnaryOp):
            inner = self._expand(node.operand)
            sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return Counter({k: sign * v for k, v in inner.items()})
        left = self._expand(node.left)
        if isinstance(node.op, ast.Pow):
            out = Counter({(): 1.0})
            for _ in range(node.right.value):
                out = _poly_mul(out, left)
            return out
        right = self._expand(node.right)
        if isinstance(node.op, ast.Mult):
            return _poly_mul(left, right)
        sign = 1.0 if isinstance(node.op, ast.Add) else -1.0
        out = Counter(left)
        for k, v in right.items():
            out[k] += sign * v
        return out


def _poly_mul(a: Counter, b: Counter) -> Counter:
    out = Counter()
    for ka, va in a.items():
        for kb, vb in b.items():
            out[tuple(sorted(ka + kb))] += va * vb
    return out


def parse_fspec(spec) -> FSpec:
    return spec if isinstance(spec, FSpec) else FSpec(str(spec))


def relabel(spec, mapping: dict) -> FSpec:
    """Rename replica labels, e.g. ``{1: 2, 2: 1}``."""
    spec = parse_fspec(spec)

    def sub(match):
        a, b = (match.group(1), match.group(2)) if match.group(1) else (match.group(3), match.group(4))
        a, b = mapping.get(int(a), int(a)), mapping.get(int(b), int(b))
        return f"R_{a}_{b}"

    return FSpec(re.sub(r"\bR(?:(\d)(\d)|_(\d+)_(\d+))\b", sub, spec.text))
