"""Ready-made example problems.

Three constructors, each returning a fresh :class:`~llcp.problem.Problem`
with parameter values already set:

``hello_world``   three positive scalars, a product objective, and a
                  parametrized surface-area budget; small enough to
                  check derivative output by hand.
``queuing``       service-rate design for two M/M/1 queues, the stock
                  sensitivity-analysis demo.
``benchmark``     a randomly generated geometric program of adjustable
                  size, feasible by construction, for timing studies.

Parameters keep their identity across solves, so callers can re-value
them (``parameter.set_value``) and solve again without recompiling.
"""

from __future__ import annotations

import numpy as np

from .expr import Parameter, Variable, diff_pos, mul, one
from .problem import Minimize, Problem

__all__ = ["hello_world", "queuing", "benchmark"]


def hello_world() -> Problem:
    """Minimize 1/(xyz) subject to a(xy + xz + yz) <= b and x >= y**c.

    Defaults a=2, b=1, c=0.5; the optimum is roughly
    (0.5612, 0.3150, 0.3689).
    """
    x = Variable("x")
    y = Variable("y")
    z = Variable("z")
    a = Parameter("a", positive=True, value=2.0)
    b = Parameter("b", positive=True, value=1.0)
    c = Parameter("c", value=0.5)
    objective = Minimize(one() / (x * y * z))
    constraints = [a * (x * y + x * z + y * z) <= b, y**c <= x]
    return Problem(objective, constraints)


def queuing() -> Problem:
    """Two-queue service design: pick arrival and service rates.

    Each queue i is M/M/1 with arrival rate lam[i] and service rate
    mu[i].  Writing ell = mu/lam for the inverse utilization, the queue
    occupancy is q = ell**-2 / (1 - ell**-1), the waiting time is
    w = q/lam + 1/mu, and the total delay is d = 1/(mu - lam).  The
    design minimizes the weighted inverse utilization gamma' * ell
    subject to per-queue ceilings on q, w, and d, floors on the arrival
    rates, and a shared service-rate budget sum(mu) <= mu_max.
    """
    lam = Variable("lam", 2)
    mu = Variable("mu", 2)
    gamma = Parameter("gamma", 2, positive=True, value=[1.0, 2.0])
    q_max = Parameter("q_max", 2, positive=True, value=[4.0, 5.0])
    w_max = Parameter("w_max", 2, positive=True, value=[2.5, 3.0])
    d_max = Parameter("d_max", 2, positive=True, value=[2.0, 2.0])
    lam_min = Parameter("lam_min", 2, positive=True, value=[0.5, 0.8])
    mu_max = Parameter("mu_max", positive=True, value=3.0)

    constraints = [mu[0] + mu[1] <= mu_max]
    cost = []
    for i in range(2):
        ell = mu[i] / lam[i]
        cost.append(gamma[i] * ell)
        q = ell**-2 / diff_pos(one(), ell**-1)
        w = q / lam[i] + one() / mu[i]
        d = one() / diff_pos(mu[i], lam[i])
        constraints += [
            q <= q_max[i],
            w <= w_max[i],
            d <= d_max[i],
            lam_min[i] <= lam[i],
        ]
    return Problem(Minimize(cost[0] + cost[1]), constraints)


def benchmark(n: int = 500, m: int = 3, seed: int = 0) -> Problem:
    """Random geometric program with n variables and m posynomial terms.

    minimize    prod_j x_j**A[0, j]
    subject to  sum_i c_i prod_j x_j**A[i, j] <= 1
                l <= x <= u

    A is drawn with small normal entries and stored as one row-major
    parameter of length m*n.  l, u, and c are chosen around a random
    interior point x0 so that x0 is strictly feasible; the box keeps the
    problem bounded, so the instance always has a solution.
    """
    if n < 1 or m < 1:
        raise ValueError("benchmark needs n >= 1 and m >= 1")
    rng = np.random.default_rng(seed)
    exponents = rng.normal(0.0, 0.1, size=(m, n))
    x0 = np.exp(rng.normal(0.0, 1.0, size=n))
    lo = x0 * np.exp(-rng.uniform(0.5, 1.5, size=n))
    hi = x0 * np.exp(rng.uniform(0.5, 1.5, size=n))
    # scale c so the posynomial evaluates to a mean of uniform(0.2, 0.8)
    # draws at x0, safely below 1
    monomials = np.exp(exponents @ np.log(x0))
    coeffs = rng.uniform(0.2, 0.8, size=m) / (m * monomials)

    x = Variable("x", n)
    A = Parameter("A", m * n, value=exponents.ravel())
    c = Parameter("c", m, positive=True, value=coeffs)
    l = Parameter("l", n, positive=True, value=lo)
    u = Parameter("u", n, positive=True, value=hi)

    def monomial(i):
        factors = [x[j] ** A[i * n + j] for j in range(n)]
        return factors[0] if n == 1 else mul(*factors)

    objective = Minimize(monomial(0))
    terms = [c[i] * monomial(i) for i in range(m)]
    posynomial = terms[0]
    for t in terms[1:]:
        posynomial = posynomial + t
    return Problem(objective, [posynomial <= one(), l <= x, x <= u])
