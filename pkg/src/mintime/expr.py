"""A small arithmetic expression language for scenario files.

Accepted syntax: decimal numbers, the coordinates ``x1``, ``x2``, ``x3``,
the operators ``+ - * /`` (and ``**`` as a synonym of ``pow``), parentheses,
and the functions ``min``, ``max``, ``abs`` and ``pow``.  Expressions are
parsed with :mod:`ast` and compiled into numpy closures; nothing is passed to
``eval``.
"""

import ast
import operator

import numpy as np

from .errors import ConfigError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: np.power,
}


def _fold(fn):
    def call(*args):
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return call


_FUNCS = {
    "min": (_fold(np.minimum), 2, None),
    "max": (_fold(np.maximum), 2, None),
    "abs": (np.abs, 1, 1),
    "pow": (np.power, 2, 2),
}


class Expr:
    """Compiled scalar expression in the coordinates of an n-vector."""

    def __init__(self, source, dim=3):
        if isinstance(source, (int, float)):
            source = repr(float(source))
        if not isinstance(source, str):
            raise ConfigError(f"expression must be a string, got {type(source).__name__}")
        self.source = source
        self.dim = dim
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc.msg}") from None
        self._fn = self._compile(tree.body)

    def _compile(self, node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            value = float(node.value)
            return lambda X: np.full(X.shape[:-1], value)
        if isinstance(node, ast.Name):
            name = node.id
            if len(name) == 2 and name[0] == "x" and name[1] in "123":
                k = int(name[1]) - 1
                if k >= self.dim:
                    raise ConfigError(f"coordinate {name} exceeds dimension {self.dim}")
                return lambda X: X[..., k]
            raise ConfigError(f"unknown name {name!r} in expression {self.source!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = self._compile(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda X: -inner(X)
            return inner
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = self._compile(node.left), self._compile(node.right)
            return lambda X: op(left(X), right(X))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords:
            fn, lo, hi = _FUNCS[node.func.id]
            nargs = len(node.args)
            if nargs < lo or (hi is not None and nargs > hi):
                raise ConfigError(f"wrong number of arguments to {node.func.id}")
            args = [self._compile(a) for a in node.args]
            return lambda X: fn(*[a(X) for a in args])
        raise ConfigError(f"unsupported construct in expression {self.source!r}")

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        with np.errstate(all="ignore"):
            out = np.asarray(self._fn(X), dtype=float)
        return np.broadcast_to(out, X.shape[:-1]).copy()

    def __repr__(self):
        return f"Expr({self.source!r})"


class VectorExpr:
    """Array of expressions evaluated together; ``shape`` is the output shape."""

    def __init__(self, sources, dim):
        arr = np.array(sources, dtype=object)
        self.shape = arr.shape
        self.sources = arr.tolist()
        self._exprs = [Expr(s, dim) for s in arr.reshape(-1)]

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        vals = [e(X) for e in self._exprs]
        out = np.stack(vals, axis=-1) if vals else np.zeros(X.shape[:-1] + (0,))
        return out.reshape(X.shape[:-1] + self.shape)
