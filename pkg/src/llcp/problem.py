"""User-facing problems: solve, sensitivities, and gradients.

A Problem bundles an objective sense, an expression tree, and
constraints over positive variables.  Solving lowers the program once
to cone data (the lowering is cached and reused when only parameter
values change), calls the operator-splitting solver, and maps the log
domain optimum back through exp.  With derivatives enabled, the solved
problem supports two linear maps:

  derivative()  pushes parameter perturbations (``delta`` on each
                parameter) forward to first-order variable changes;
  backward()    pulls a gradient with respect to the variables
                (``gradient`` on each variable) back to parameters.

Both are chained through the parameter transform, the affine data map,
and the cone-program solution map, without materializing Jacobians.
"""

from __future__ import annotations

import time

import numpy as np

from .canon import canonicalize, lin_eval
from .compiler import compile_problem
from .diff import ResidualPoint, dphi, dphi_adjoint
from .expr import (
    Constraint,
    ShapeError,
    _as_expr,
    explain_failure,
    parameters_of,
    variables_of,
)
from . import solver

__all__ = ["Maximize", "Minimize", "NoDerivativeStateError", "NotDgpError",
           "Problem"]


class NotDgpError(ValueError):
    """The program violates the composition grammar; see .diagnostic."""

    def __init__(self, diagnostic):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic


class NoDerivativeStateError(RuntimeError):
    """derivative()/backward() called without a derivative-enabled solve."""


class Minimize:
    """Objective sense wrapper for minimization."""

    sense = "minimize"

    def __init__(self, expr):
        self.expr = _as_expr(expr)


class Maximize:
    """Objective sense wrapper for maximization."""

    sense = "maximize"

    def __init__(self, expr):
        self.expr = _as_expr(expr)


def _leaf_field(leaf, field, default):
    raw = getattr(leaf, field)
    if raw is None:
        return default
    arr = np.atleast_1d(np.asarray(raw, dtype=float)).ravel()
    if arr.size != leaf.size:
        raise ShapeError(
            f"{leaf.name}.{field} has size {arr.size}, expected {leaf.size}")
    return arr


class Problem:
    """An optimization problem over positive variables.

    The structure (objective and constraints) is fixed at construction;
    parameter values may change freely between solves and reuse the
    cached lowering.  After ``solve`` each variable's ``value`` holds
    the optimum, and ``status``, ``value``, and ``solution`` describe
    the solve.
    """

    def __init__(self, objective, constraints=()):
        if not isinstance(objective, (Minimize, Maximize)):
            raise TypeError("objective must be Minimize(...) or Maximize(...)")
        self.objective = objective
        self.constraints = tuple(constraints)
        for con in self.constraints:
            if not isinstance(con, Constraint):
                raise TypeError(f"not a constraint: {con!r}")
        sides = [objective.expr]
        for con in self.constraints:
            sides.append(con.lhs)
            sides.append(con.rhs)
        self.variables = tuple(variables_of(*sides))
        self.parameters = tuple(parameters_of(*sides))
        self._compiled = None
        self.status = None
        self.value = None
        self.solution = None
        self.stats = None
        self.nonsmooth = False
        self._point = None
        self._alpha = None
        self._xhat = None
        self._warm = None

    # -- grammar -------------------------------------------------------

    def is_dgp(self) -> bool:
        return self.explain() is None

    def explain(self):
        """Diagnostic for the first grammar violation, or None."""
        need = "convex" if self.objective.sense == "minimize" else "concave"
        msg = explain_failure(self.objective.expr, need, "objective")
        if msg:
            return msg
        for k, con in enumerate(self.constraints):
            where = f"constraints[{k}]"
            if con.op == "==":
                for side, expr in (("lhs", con.lhs), ("rhs", con.rhs)):
                    msg = explain_failure(expr, "affine", f"{where}.{side}")
                    if msg:
                        return msg
            else:
                msg = (explain_failure(con.lhs, "convex", f"{where}.lhs")
                       or explain_failure(con.rhs, "concave", f"{where}.rhs"))
                if msg:
                    return msg
        return None

    # -- lowering cache ------------------------------------------------

    def _ensure_compiled(self):
        if self._compiled is None:
            msg = self.explain()
            if msg is not None:
                raise NotDgpError(msg)
            prob, cmap = canonicalize(
                self.objective.sense, self.objective.expr, self.constraints,
                self.variables, self.parameters)
            self._compiled = (prob, cmap, compile_problem(prob))
        return self._compiled

    # -- solving -------------------------------------------------------

    def solve(self, *, derivatives=False, eps=1e-8, max_iters=100000,
              warm_start=True):
        """Solve and return the optimal objective value.

        Returns None and leaves variable values untouched when the
        solver reports anything but optimality; the outcome is always
        recorded in ``status``.  With derivatives=True a successful
        solve retains the state consumed by derivative() and backward().
        """
        t_start = time.perf_counter()
        prob, cmap, pmap = self._ensure_compiled()
        alpha = cmap.pack_alpha()
        beta = cmap.eval_C(alpha)
        A, b, c = pmap.instantiate(beta)
        t_solver = time.perf_counter()
        sol = solver.solve(A, b, c, pmap.dims, eps=eps, max_iters=max_iters,
                           warm_start=self._warm if warm_start else None)
        solver_time = time.perf_counter() - t_solver
        self.status = sol.status
        self.solution = sol
        self._point = None
        self.nonsmooth = False
        if sol.status != "optimal":
            self.value = None
            self.stats = {"total_time": time.perf_counter() - t_start,
                          "solver_time": solver_time,
                          "iterations": sol.iterations}
            return None
        self._warm = (sol.x, sol.y, sol.s)
        xhat = sol.x[:pmap.n_x]
        for var, lo, hi in prob.var_slices:
            var.value = np.exp(sol.x[lo:hi])
        sign = -1.0 if self.objective.sense == "maximize" else 1.0
        self.value = float(np.exp(sign * lin_eval(prob.objective, beta, sol.x)))
        if derivatives:
            self._point = ResidualPoint(A, b, c, pmap.dims,
                                        sol.x, sol.y, sol.s)
            self.nonsmooth = self._point.nonsmooth
            self._alpha = alpha
            self._xhat = xhat
        self.stats = {"total_time": time.perf_counter() - t_start,
                      "solver_time": solver_time,
                      "iterations": sol.iterations}
        return self.value

    # -- sensitivities ---------------------------------------------------

    def _require_point(self):
        if self._point is None:
            raise NoDerivativeStateError(
                "no derivative state: solve(derivatives=True) must succeed "
                "before calling derivative() or backward()")
        prob, cmap, pmap = self._compiled
        return prob, cmap, pmap

    def derivative(self):
        """First-order variable changes for the parameter ``delta``s.

        Reads each parameter's ``delta`` (default zero), writes each
        variable's ``delta``, and returns {variable name: delta}.
        """
        prob, cmap, pmap = self._require_point()
        dalpha = np.concatenate(
            [_leaf_field(p, "delta", np.zeros(p.size))
             for p in self.parameters]) if self.parameters else np.zeros(0)
        dbeta = cmap.apply_DC(self._alpha, dalpha)
        dA, db, dc = pmap.perturbation_matrices(pmap.apply_T(dbeta))
        dxhat = dphi(self._point, dA, db, dc)
        out = {}
        for var, lo, hi in prob.var_slices:
            var.delta = np.exp(self._xhat[lo:hi]) * dxhat[lo:hi]
            out[var.name] = var.delta
        return out

    def backward(self):
        """Gradient of sum(gradient_i . x_i) with respect to parameters.

        Reads each variable's ``gradient`` (default all ones), writes
        each parameter's ``gradient``, and returns {parameter name:
        gradient}.
        """
        prob, cmap, pmap = self._require_point()
        dxhat = np.zeros(pmap.n)
        for var, lo, hi in prob.var_slices:
            g = _leaf_field(var, "gradient", np.ones(var.size))
            dxhat[lo:hi] = np.exp(self._xhat[lo:hi]) * g
        dA, db, dc = dphi_adjoint(self._point, dxhat)
        dvals = pmap.pack_data(dA.data, db, dc)
        dalpha = cmap.apply_DC_adjoint(self._alpha,
                                       pmap.apply_T_adjoint(dvals))
        out = {}
        pos = 0
        for p in self.parameters:
            p.gradient = dalpha[pos:pos + p.size]
            out[p.name] = p.gradient
            pos += p.size
        return out
