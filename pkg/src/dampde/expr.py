"""Arithmetic expressions in ``t``, ``x``, ``y`` for user-supplied data.

Only numbers, the variables, ``pi``, the functions ``sin``, ``cos``,
``exp``, ``+ - * / **`` and parentheses are accepted. Expressions are
compiled once to a closure over numpy ufuncs.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

from .fields import TimeFunction

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}
_VARS = ("t", "x", "y")
_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}


class ExpressionError(ValueError):
    pass


def _compile(node):
    if isinstance(node, ast.Expression):
        return _compile(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        c = float(node.value)
        return lambda env: c
    if isinstance(node, ast.Name):
        if node.id in _VARS:
            name = node.id
            return lambda env: env[name]
        if node.id in _CONSTS:
            c = _CONSTS[node.id]
            return lambda env: c
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op, a, b = _BINOPS[type(node.op)], _compile(node.left), _compile(node.right)
        return lambda env: op(a(env), b(env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        op, a = _UNOPS[type(node.op)], _compile(node.operand)
        return lambda env: op(a(env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        fn, a = _FUNCS[node.func.id], _compile(node.args[0])
        return lambda env: fn(a(env))
    if isinstance(node, ast.Call):
        fname = getattr(node.func, "id", "?")
        raise ExpressionError(f"unknown function {fname!r}; allowed: {', '.join(sorted(_FUNCS))}")
    raise ExpressionError(f"unsupported syntax ({type(node).__name__})")


def parse_expression(text: str, name=None) -> TimeFunction:
    """Compile ``text`` to a ``TimeFunction`` of ``(t, x, y)``."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("expression must be a nonempty string")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    body = _compile(tree)

    def fn(t, x, y):
        return body({"t": t, "x": x, "y": y})

    return TimeFunction(fn, name=name or text)
