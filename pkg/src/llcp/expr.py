"""Expression trees over positive variables with log-log curvature analysis.

An expression is a tree whose leaves are positive variables, parameters, or
strictly positive constants, and whose inner nodes are atoms with known
log-log curvature and per-argument monotonicity.  Curvature of a compound
expression is derived by the composition rule: an atom application is
log-log convex if the atom is log-log convex (or affine) and every argument
in a nondecreasing slot is log-log convex, every argument in a nonincreasing
slot is log-log concave, and every argument in an unspecified slot is
log-log affine; symmetrically for log-log concave.

Parameters are atoms too: a positive parameter is log-log affine, a
parameter without declared sign has unknown curvature everywhere except as
a power exponent.  ``power(x, a)`` with a parameter exponent is admitted
only when the base ``x`` is not parametrized, and certifies log-log affine
only for log-log affine bases (the exponent's sign is unknown, so the slot
is monotonicity-unspecified).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Constant",
    "Variable",
    "Parameter",
    "Elem",
    "AtomApp",
    "Curvature",
    "Constraint",
    "ExpressionError",
    "ArityError",
    "ShapeError",
    "PowerRuleError",
    "DomainError",
    "add",
    "mul",
    "power",
    "maximum",
    "minimum",
    "ratio",
    "diff_pos",
    "exp",
    "log",
    "one",
    "curvature",
    "evaluate",
    "variables_of",
    "parameters_of",
]


class ExpressionError(ValueError):
    """Malformed expression."""


class ArityError(ExpressionError):
    """Atom applied to the wrong number of arguments."""


class ShapeError(ExpressionError):
    """Argument shapes are not broadcastable."""


class PowerRuleError(ExpressionError):
    """Parameter exponent applied to a parametrized base."""


class DomainError(ExpressionError):
    """Value outside the positive domain an operand requires."""


def _as_expr(obj) -> "Expr":
    if isinstance(obj, Expr):
        return obj
    if isinstance(obj, (int, float)):
        return Constant(float(obj))
    if isinstance(obj, (list, tuple, np.ndarray)):
        return Constant(np.asarray(obj, dtype=float))
    raise ExpressionError(f"cannot interpret {obj!r} as an expression")


class Expr:
    """Base class for all expression nodes.  Immutable."""

    __slots__ = ()

    @property
    def size(self) -> int:
        raise NotImplementedError

    # -- operator sugar -------------------------------------------------

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __truediv__(self, other):
        return ratio(self, _as_expr(other))

    def __rtruediv__(self, other):
        return ratio(_as_expr(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __sub__(self, other):
        raise TypeError(
            "subtraction is not an atom; use diff_pos(y, x) for y - x "
            "with domain x < y"
        )

    def __rsub__(self, other):
        raise TypeError(
            "subtraction is not an atom; use diff_pos(y, x) for y - x "
            "with domain x < y"
        )

    def __neg__(self):
        raise TypeError("expressions are positive; negation is not defined")

    # comparisons build constraints, so hashing must stay identity-based
    def __hash__(self):
        return id(self)

    def __le__(self, other):
        return Constraint("<=", self, _as_expr(other))

    def __ge__(self, other):
        return Constraint("<=", _as_expr(other), self)

    def __eq__(self, other):  # type: ignore[override]
        return Constraint("==", self, _as_expr(other))

    def __ne__(self, other):  # type: ignore[override]
        raise TypeError("expressions do not support !=")


class Constant(Expr):
    """Strictly positive numeric constant, scalar or vector."""

    __slots__ = ("value",)

    def __init__(self, value):
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.ndim != 1:
            raise ShapeError("constants must be scalars or 1-d vectors")
        if not np.all(np.isfinite(arr)):
            raise DomainError("constant entries must be finite")
        if np.any(arr <= 0):
            raise DomainError(
                f"constants must be strictly positive, got {value!r}"
            )
        self.value = arr
        self.value.setflags(write=False)

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self):
        if self.value.size == 1:
            return f"Constant({self.value[0]:g})"
        return f"Constant({self.value.tolist()})"


class Variable(Expr):
    """Positive optimization variable.

    ``value`` and ``delta`` are populated by ``Problem.solve`` and
    ``Problem.derivative``; ``gradient`` is read by ``Problem.backward``.
    """

    __slots__ = ("name", "_size", "value", "delta", "gradient")

    def __init__(self, name: str, size: int = 1):
        if not name or not isinstance(name, str):
            raise ExpressionError("variable name must be a non-empty string")
        if size < 1:
            raise ShapeError("variable size must be >= 1")
        self.name = name
        self._size = int(size)
        self.value = None
        self.delta = None
        self.gradient = None

    @property
    def size(self) -> int:
        return self._size

    def __getitem__(self, idx: int) -> "Elem":
        return Elem(self, idx)

    def __repr__(self):
        return f"Variable({self.name!r}, size={self._size})"


class Parameter(Expr):
    """Problem parameter; positive parameters are log-log affine.

    Parameters without ``positive=True`` may appear only as power
    exponents.  ``delta`` feeds ``Problem.derivative``; ``gradient`` is
    written by ``Problem.backward``.
    """

    __slots__ = ("name", "_size", "positive", "value", "delta", "gradient")

    def __init__(self, name: str, size: int = 1, positive: bool = False,
                 value=None):
        if not name or not isinstance(name, str):
            raise ExpressionError("parameter name must be a non-empty string")
        if size < 1:
            raise ShapeError("parameter size must be >= 1")
        self.name = name
        self._size = int(size)
        self.positive = bool(positive)
        self.value = None
        self.delta = None
        self.gradient = None
        if value is not None:
            self.set_value(value)

    @property
    def size(self) -> int:
        return self._size

    def set_value(self, value):
        arr = np.atleast_1d(np.asarray(value, dtype=float)).copy()
        if arr.size != self._size:
            raise ShapeError(
                f"parameter {self.name}: value has size {arr.size}, "
                f"expected {self._size}"
            )
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"parameter {self.name}: value must be finite")
        if self.positive and np.any(arr <= 0):
            raise DomainError(
                f"parameter {self.name} is positive but got {arr}"
            )
        self.value = arr

    def __getitem__(self, idx: int) -> "Elem":
        return Elem(self, idx)

    def __repr__(self):
        kind = "positive" if self.positive else "real"
        return f"Parameter({self.name!r}, size={self._size}, {kind})"


class Elem(Expr):
    """Scalar view of one entry of a vector variable or parameter."""

    __slots__ = ("base", "index")

    def __init__(self, base, index: int):
        if not isinstance(base, (Variable, Parameter)):
            raise ExpressionError("only variables and parameters are indexable")
        index = int(index)
        if not 0 <= index < base.size:
            raise ShapeError(
                f"index {index} out of range for {base.name} of size {base.size}"
            )
        self.base = base
        self.index = index

    @property
    def size(self) -> int:
        return 1

    def __repr__(self):
        return f"{self.base.name}[{self.index}]"


# ---------------------------------------------------------------------------
# Atom registry


@dataclass(frozen=True)
class AtomSignature:
    """Shape and curvature contract of one atom."""

    name: str
    arity: int | None          # None means n-ary, >= 2
    monotonicity: tuple        # per-argument; n-ary atoms repeat entry 0
    curvature: str             # intrinsic: "affine" | "convex" | "concave"
    domain: str = ""

    def mono(self, i: int) -> str:
        if self.arity is None:
            return self.monotonicity[0]
        return self.monotonicity[i]


NONDECR = "nondecreasing"
NONINCR = "nonincreasing"
UNSPEC = "unspecified"

ATOMS: dict[str, AtomSignature] = {
    "mul": AtomSignature("mul", None, (NONDECR,), "affine"),
    "add": AtomSignature("add", None, (NONDECR,), "convex"),
    "maximum": AtomSignature("maximum", None, (NONDECR,), "convex"),
    "minimum": AtomSignature("minimum", None, (NONDECR,), "concave"),
    "ratio": AtomSignature("ratio", 2, (NONDECR, NONINCR), "affine"),
    "diff_pos": AtomSignature(
        "diff_pos", 2, (NONDECR, NONINCR), "concave", domain="arg2 < arg1"
    ),
    "exp": AtomSignature("exp", 1, (NONDECR,), "convex"),
    "log": AtomSignature("log", 1, (NONDECR,), "concave", domain="arg > 1"),
    # power is special-cased: its exponent is an attribute, not an argument
    "power": AtomSignature("power", 1, (UNSPEC,), "affine"),
}


class AtomApp(Expr):
    """Application of an atom to argument expressions."""

    __slots__ = ("atom", "args", "exponent")

    def __init__(self, atom: str, args: tuple, exponent=None):
        self.atom = atom
        self.args = args
        self.exponent = exponent

    @property
    def size(self) -> int:
        return max(a.size for a in self.args)

    def __repr__(self):
        if self.atom == "power":
            return f"power({self.args[0]!r}, {self.exponent!r})"
        inner = ", ".join(repr(a) for a in self.args)
        return f"{self.atom}({inner})"


def _broadcast_size(args, atom):
    sizes = {a.size for a in args}
    big = sizes - {1}
    if len(big) > 1:
        raise ShapeError(
            f"{atom}: argument sizes {sorted(sizes)} are not broadcastable"
        )
    return max(sizes)


def build_atom(atom_id: str, args, exponent=None) -> Expr:
    """Construct an atom application, validating arity, shapes, and the
    parameter-exponent rule."""
    if atom_id == "one":
        if args:
            raise ArityError("one takes no arguments")
        return Constant(1.0)
    sig = ATOMS.get(atom_id)
    if sig is None:
        raise ExpressionError(f"unknown atom {atom_id!r}")
    args = tuple(_as_expr(a) for a in args)
    if sig.arity is None:
        if len(args) < 2:
            raise ArityError(f"{atom_id} takes at least 2 arguments")
    elif len(args) != sig.arity:
        raise ArityError(
            f"{atom_id} takes {sig.arity} argument(s), got {len(args)}"
        )
    _broadcast_size(args, atom_id)

    if atom_id == "power":
        return _build_power(args[0], exponent)
    if exponent is not None:
        raise ExpressionError(f"{atom_id} does not take an exponent")

    # associative n-ary atoms flatten, which keeps canonical forms small
    if sig.arity is None:
        flat = []
        for a in args:
            if isinstance(a, AtomApp) and a.atom == atom_id:
                flat.extend(a.args)
            else:
                flat.append(a)
        args = tuple(flat)

    if atom_id == "log" and isinstance(args[0], Constant):
        if np.any(args[0].value <= 1.0):
            raise DomainError("log of a constant <= 1 is not positive")
    if atom_id == "diff_pos" and all(isinstance(a, Constant) for a in args):
        y, x = args
        if np.any(np.atleast_1d(y.value - x.value) <= 0):
            raise DomainError("diff_pos of constants requires y > x")

    return AtomApp(atom_id, args)


def _build_power(base: Expr, exponent) -> Expr:
    if exponent is None:
        raise ExpressionError("power requires an exponent")
    if isinstance(exponent, (int, float)):
        return AtomApp("power", (base,), exponent=float(exponent))
    if isinstance(exponent, (Parameter, Elem)):
        ref = exponent.base if isinstance(exponent, Elem) else exponent
        if not isinstance(ref, Parameter):
            raise PowerRuleError("power exponent must be a number or parameter")
        if exponent.size != 1:
            raise ShapeError("power exponent must be scalar")
        if _analyze(base).parametrized:
            raise PowerRuleError(
                "parameter exponent requires a non-parametrized base"
            )
        return AtomApp("power", (base,), exponent=exponent)
    raise PowerRuleError(
        "power exponent must be a fixed number or a (scalar) parameter, "
        "not a composed expression"
    )


# -- convenience constructors ------------------------------------------------

def mul(*args) -> Expr:
    return build_atom("mul", args)


def add(*args) -> Expr:
    return build_atom("add", args)


def maximum(*args) -> Expr:
    return build_atom("maximum", args)


def minimum(*args) -> Expr:
    return build_atom("minimum", args)


def ratio(num, den) -> Expr:
    return build_atom("ratio", (num, den))


def diff_pos(y, x) -> Expr:
    """The positive difference y - x, valid on x < y; log-log concave."""
    return build_atom("diff_pos", (y, x))


def exp(arg) -> Expr:
    return build_atom("exp", (arg,))


def log(arg) -> Expr:
    return build_atom("log", (arg,))


def power(base, exponent) -> Expr:
    return build_atom("power", (base,), exponent=exponent)


def one() -> Constant:
    return Constant(1.0)


# ---------------------------------------------------------------------------
# Curvature analysis


@dataclass(frozen=True)
class Curvature:
    """Log-log curvature verdict plus a parametrization flag."""

    kind: str                  # constant | affine | convex | concave | unknown
    parametrized: bool

    @property
    def is_convex(self) -> bool:
        return self.kind in ("constant", "affine", "convex")

    @property
    def is_concave(self) -> bool:
        return self.kind in ("constant", "affine", "concave")

    @property
    def is_affine(self) -> bool:
        return self.kind in ("constant", "affine")


@dataclass(frozen=True)
class _Facts:
    cvx: bool
    ccv: bool
    const: bool
    parametrized: bool

    def as_curvature(self) -> Curvature:
        if self.const:
            kind = "constant"
        elif self.cvx and self.ccv:
            kind = "affine"
        elif self.cvx:
            kind = "convex"
        elif self.ccv:
            kind = "concave"
        else:
            kind = "unknown"
        return Curvature(kind, self.parametrized)


def _analyze(e: Expr, memo=None) -> _Facts:
    if memo is None:
        memo = {}
    got = memo.get(id(e))
    if got is not None:
        return got
    facts = _analyze_node(e, memo)
    memo[id(e)] = facts
    return facts


def _analyze_node(e: Expr, memo) -> _Facts:
    if isinstance(e, Constant):
        return _Facts(True, True, True, False)
    if isinstance(e, Variable):
        return _Facts(True, True, False, False)
    if isinstance(e, Parameter):
        if e.positive:
            return _Facts(True, True, False, True)
        return _Facts(False, False, False, True)
    if isinstance(e, Elem):
        return _analyze_node(e.base, memo)
    if not isinstance(e, AtomApp):
        raise ExpressionError(f"unknown node {e!r}")

    if e.atom == "power":
        return _analyze_power(e, memo)

    sig = ATOMS[e.atom]
    facts = [_analyze(a, memo) for a in e.args]
    const = all(f.const for f in facts)
    par = any(f.parametrized for f in facts)
    if const:
        return _Facts(True, True, True, par)

    intrinsic_cvx = sig.curvature in ("affine", "convex")
    intrinsic_ccv = sig.curvature in ("affine", "concave")
    cvx = intrinsic_cvx
    ccv = intrinsic_ccv
    for i, f in enumerate(facts):
        m = sig.mono(i)
        if m == NONDECR:
            cvx = cvx and f.cvx
            ccv = ccv and f.ccv
        elif m == NONINCR:
            cvx = cvx and f.ccv
            ccv = ccv and f.cvx
        else:
            both = f.cvx and f.ccv
            cvx = cvx and both
            ccv = ccv and both
    return _Facts(cvx, ccv, False, par)


def _analyze_power(e: AtomApp, memo) -> _Facts:
    base = _analyze(e.args[0], memo)
    a = e.exponent
    if isinstance(a, float):
        if a == 0.0:
            return _Facts(True, True, True, base.parametrized)
        if a > 0:
            cvx, ccv = base.cvx, base.ccv
        else:
            cvx, ccv = base.ccv, base.cvx
        return _Facts(cvx, ccv, base.const, base.parametrized)
    # parameter exponent: sign unknown, so the base slot is unspecified and
    # must be log-log affine; the node itself is parametrized
    both = base.cvx and base.ccv
    return _Facts(both, both, False, True)


def curvature(e: Expr) -> Curvature:
    """Tightest log-log curvature derivable by the composition rule."""
    return _analyze(_as_expr(e)).as_curvature()


# -- diagnostics -------------------------------------------------------------

_NEED_WORD = {"convex": "log-log convex", "concave": "log-log concave",
              "affine": "log-log affine"}


def explain_failure(e: Expr, need: str, path: str = "") -> str | None:
    """Locate the first subtree that blocks the required curvature.

    Returns None when ``e`` satisfies ``need``; otherwise a human-readable
    diagnostic naming the offending node by path.
    """
    memo: dict = {}

    def ok(node, req):
        f = _analyze(node, memo)
        if f.const:
            return True
        if req == "convex":
            return f.cvx
        if req == "concave":
            return f.ccv
        return f.cvx and f.ccv

    def descend(node, req, path):
        if ok(node, req):
            return None
        label = path or "expression"
        if isinstance(node, Parameter) or (
            isinstance(node, Elem) and isinstance(node.base, Parameter)
        ):
            name = node.base.name if isinstance(node, Elem) else node.name
            return (f"{label}: parameter {name!r} has no declared sign, so "
                    f"its log-log curvature is unknown outside power exponents")
        if not isinstance(node, AtomApp):
            return f"{label}: not {_NEED_WORD[req]}"
        sig = ATOMS[node.atom]
        intrinsic_ok = (
            sig.curvature == "affine"
            or (req == "convex" and sig.curvature == "convex")
            or (req == "concave" and sig.curvature == "concave")
        )
        if node.atom == "power":
            sub_req = req
            a = node.exponent
            if isinstance(a, float):
                if a < 0:
                    sub_req = {"convex": "concave", "concave": "convex",
                               "affine": "affine"}[req]
            else:
                sub_req = "affine"
            deeper = descend(node.args[0], sub_req, f"{path or 'power'}.arg")
            return deeper or (f"{label}: power is not {_NEED_WORD[req]} here")
        if not intrinsic_ok:
            return (f"{label}: atom {node.atom!r} is log-log {sig.curvature}, "
                    f"which cannot appear in a {_NEED_WORD[req]} position")
        for i, arg in enumerate(node.args):
            m = sig.mono(i)
            if m == NONDECR:
                sub_req = req
            elif m == NONINCR:
                sub_req = {"convex": "concave", "concave": "convex",
                           "affine": "affine"}[req]
            else:
                sub_req = "affine"
            if not ok(arg, sub_req):
                sub_path = f"{path + '.' if path else ''}{node.atom}.args[{i}]"
                deeper = descend(arg, sub_req, sub_path)
                if deeper:
                    return deeper
        return f"{label}: atom {node.atom!r} is not {_NEED_WORD[req]} here"

    return descend(e, need, path)


# ---------------------------------------------------------------------------
# Numeric evaluation


def evaluate(e: Expr, values: dict | None = None) -> np.ndarray:
    """Evaluate an expression to a positive vector.

    Leaf values come from the ``value`` attributes of variables and
    parameters, unless overridden through ``values`` (a mapping from leaf
    object to array).
    """

    def leaf_value(leaf):
        if values is not None and leaf in values:
            arr = np.atleast_1d(np.asarray(values[leaf], dtype=float))
        else:
            if leaf.value is None:
                raise DomainError(f"{leaf.name} has no value")
            arr = np.atleast_1d(np.asarray(leaf.value, dtype=float))
        if arr.size != leaf.size:
            raise ShapeError(
                f"{leaf.name}: value of size {arr.size}, expected {leaf.size}"
            )
        return arr

    def rec(node):
        if isinstance(node, Constant):
            return node.value
        if isinstance(node, (Variable, Parameter)):
            return leaf_value(node)
        if isinstance(node, Elem):
            return leaf_value(node.base)[node.index:node.index + 1]
        assert isinstance(node, AtomApp)
        if node.atom == "power":
            a = node.exponent
            if isinstance(a, float) and a == 0.0:
                return np.ones(node.args[0].size)
            base = rec(node.args[0])
            if isinstance(a, float):
                return base ** a
            aval = rec(a)
            return base ** aval
        args = [rec(a) for a in node.args]
        if node.atom == "mul":
            out = args[0].copy()
            for a in args[1:]:
                out = out * a
            return out
        if node.atom == "add":
            out = args[0].copy()
            for a in args[1:]:
                out = out + a
            return out
        if node.atom == "maximum":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        if node.atom == "minimum":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        if node.atom == "ratio":
            return args[0] / args[1]
        if node.atom == "diff_pos":
            return args[0] - args[1]
        if node.atom == "exp":
            return np.exp(args[0])
        if node.atom == "log":
            return np.log(args[0])
        raise ExpressionError(f"unknown atom {node.atom!r}")

    return np.broadcast_to(rec(e), (e.size,)).astype(float)


def _walk_leaves(e: Expr, kind, seen, out):
    if isinstance(e, kind):
        if id(e) not in seen:
            seen.add(id(e))
            out.append(e)
        return
    if isinstance(e, Elem):
        _walk_leaves(e.base, kind, seen, out)
        return
    if isinstance(e, AtomApp):
        for a in e.args:
            _walk_leaves(a, kind, seen, out)
        if e.atom == "power" and isinstance(e.exponent, (Parameter, Elem)):
            _walk_leaves(e.exponent, kind, seen, out)


def variables_of(*exprs) -> list:
    """Variables in first-appearance (depth-first) order."""
    seen: set = set()
    out: list = []
    for e in exprs:
        _walk_leaves(e, Variable, seen, out)
    return out


def parameters_of(*exprs) -> list:
    """Parameters in first-appearance (depth-first) order, including
    power exponents."""
    seen: set = set()
    out: list = []
    for e in exprs:
        _walk_leaves(e, Parameter, seen, out)
    return out


class Constraint:
    """A normalized relation ``lhs <= rhs`` or ``lhs == rhs``."""

    __slots__ = ("op", "lhs", "rhs")

    def __init__(self, op: str, lhs: Expr, rhs: Expr):
        if op not in ("<=", "=="):
            raise ExpressionError(f"unsupported relation {op!r}")
        if not (lhs.size == rhs.size or lhs.size == 1 or rhs.size == 1):
            raise ShapeError(
                f"constraint sides have sizes {lhs.size} and {rhs.size}"
            )
        self.op = op
        self.lhs = lhs
        self.rhs = rhs

    @property
    def size(self) -> int:
        return max(self.lhs.size, self.rhs.size)

    def __bool__(self):
        raise TypeError(
            "constraints have no truth value; pass them to Problem instead"
        )

    def __repr__(self):
        return f"Constraint({self.lhs!r} {self.op} {self.rhs!r})"
