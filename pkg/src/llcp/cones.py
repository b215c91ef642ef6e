"""Projections onto the product cone and their derivatives.

The product cone is {0}^nz x R+^nl x Kexp^ne with

    Kexp = cl{(x, y, z) : y > 0, y e^(x/y) <= z},

whose dual (up to sign conventions) appears in the operator-splitting
iteration.  Zero and nonnegative blocks project coordinatewise; the
exponential cone projection reduces, outside three easy regions, to a
one-dimensional root find in rho = x/y of the projected point, solved by
safeguarded Newton inside a sign-change bracket.  All formulas are written
to avoid overflow for large |rho|: for rho >= 0 the root function is
rescaled by e^(-2 rho).

Derivatives follow from the case analysis: identity inside the cone, zero
inside the polar, a diagonal on the third region, and for boundary
projections the solution of the bordered system obtained by differentiating
the projection's stationarity conditions.  Points within tolerance of a
case boundary are flagged as nonsmooth; callers can warn without failing.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

__all__ = [
    "project_expcone",
    "dproject_expcone",
    "project_cone",
    "dproject_cone",
    "in_expcone",
    "in_dual_expcone",
]

_NS_TOL = 1e-9


def in_expcone(v, tol=0.0) -> bool:
    """Membership in the exponential cone.

    Positive tol means metric distance: the point passes when it lies
    within tol (relatively scaled) of the cone, measured through the
    projection.  Zero or negative tol uses the exact cross-multiplied
    inequality with a strict margin, which stays meaningful as a routing
    or near-boundary probe."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    if tol > 0.0:
        p, _ = project_expcone((x, y, z))
        err = math.hypot(p[0] - x, p[1] - y, p[2] - z)
        return err <= tol * (1.0 + math.hypot(x, y, z))
    if y > 0.0:
        q = x / y
        if q <= 1.0:
            eq = math.exp(q)
            slack = 0.0
            if tol != 0.0:
                gn = math.hypot(eq, 0.0 if eq == 0.0 else eq * (1.0 - q), 1.0)
                slack = tol * (1.0 + gn)
            return y * eq <= z + slack
        emq = math.exp(-q)
        slack = 0.0
        if tol != 0.0:
            slack = tol * (1.0 + math.hypot(1.0, q - 1.0, emq))
        return y <= z * emq + slack
    if y >= -tol:
        return x <= tol and z >= -tol
    return False


def in_polar_expcone(v, tol=0.0) -> bool:
    """Membership in the polar of the exponential cone (same tol rules).

    By the Moreau decomposition the distance to the polar cone is the
    norm of the projection onto the cone itself."""
    u, vv, w = float(v[0]), float(v[1]), float(v[2])
    if tol > 0.0:
        p, _ = project_expcone((u, vv, w))
        return math.hypot(*p) <= tol * (1.0 + math.hypot(u, vv, w))
    if u > 0.0:
        q = vv / u
        if q <= 1.0:
            eq = math.exp(q)
            slack = 0.0
            if tol != 0.0:
                gn = math.hypot(0.0 if eq == 0.0 else eq * (1.0 - q),
                                eq, math.e)
                slack = tol * (1.0 + gn)
            return u * eq <= -math.e * w + slack
        emq = math.exp(-q)
        slack = 0.0
        if tol != 0.0:
            slack = tol * (1.0 + math.hypot(q - 1.0, 1.0, math.e * emq))
        return u <= -math.e * w * emq + slack
    if u >= -tol:
        return vv <= tol and w <= tol
    return False


def in_dual_expcone(v, tol=0.0) -> bool:
    return in_polar_expcone((-v[0], -v[1], -v[2]), tol)


def _root_fun(rho, r, s, t):
    """Sign-stable residual whose zero gives the projection's x/y ratio.

    Once the exponential underflows the surviving terms are exactly
    linear in rho; returning that form directly keeps huge |rho| free of
    inf * 0 contamination from the polynomial factors."""
    if rho < 0.0:
        a = math.exp(rho)
        if a == 0.0:
            return r - rho * s
        return (r - rho * s) * (1.0 + a * a * (1.0 - rho)) \
            - (s * a - t) * a * (1.0 - rho + rho * rho)
    e1 = math.exp(-rho)
    if e1 == 0.0:
        return r * (1.0 - rho) - s
    e2 = e1 * e1
    return (r - rho * s) * (e2 + 1.0 - rho) \
        - (s - t * e1) * (1.0 - rho + rho * rho)


def _root_der(rho, r, s, t):
    if rho < 0.0:
        a = math.exp(rho)
        if a == 0.0:
            return -s
        a2 = a * a
        D = 1.0 + a2 * (1.0 - rho)
        E = 1.0 - rho + rho * rho
        return (-s * D + (r - rho * s) * a2 * (1.0 - 2.0 * rho)
                - (2.0 * s * a2 - t * a) * E
                - (s * a - t) * a * (2.0 * rho - 1.0))
    e1 = math.exp(-rho)
    if e1 == 0.0:
        return -r
    e2 = e1 * e1
    E = 1.0 - rho + rho * rho
    return (-s * (e2 + 1.0 - rho) + (r - rho * s) * (-2.0 * e2 - 1.0)
            - t * e1 * E - (s - t * e1) * (2.0 * rho - 1.0))


def _polish(lo, hi, flo, r, s, t):
    """Safeguarded Newton for the residual root inside a sign bracket."""
    rho = 0.5 * (lo + hi)
    for _ in range(200):
        f = _root_fun(rho, r, s, t)
        if f == 0.0:
            break
        if (f > 0.0) == (flo > 0.0):
            lo = rho
        else:
            hi = rho
        if hi - lo <= 1e-15 * (1.0 + abs(lo) + abs(hi)):
            break
        fp = _root_der(rho, r, s, t)
        nxt = rho - f / fp if fp != 0.0 else rho
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        rho = nxt
    return rho


def _solve_boundary(r, s, t):
    """Scan sign-change brackets and keep the first root whose recovered
    point satisfies the projection's optimality conditions.

    Face-hugging inputs put the root near r/s (left) or 1 - s/r (right),
    which can sit far outside any fixed window, so the scan reach adapts
    to those estimates.  Beyond |rho| ~ 745 the exponentials underflow
    and the residual is exactly linear there, so Newton still converges
    in one step inside such brackets."""
    reach = 512.0
    if s > 0.0:
        reach = max(reach, 2.0 * abs(r) / s + 2.0)
    if r > 0.0:
        reach = max(reach, 2.0 * abs(s) / r + 4.0)
    reach = min(reach, 1e306)
    knots = [0.0]
    step = 0.5
    while step <= reach:
        knots.extend((step, -step))
        step *= 2.0
    knots.sort()
    scale = 1.0 + abs(r) + abs(s) + abs(t)
    prev_k = knots[0]
    prev_f = _root_fun(prev_k, r, s, t)
    for k in knots[1:]:
        f = _root_fun(k, r, s, t)
        if f == 0.0 or (f > 0.0) != (prev_f > 0.0):
            rho = _polish(prev_k, k, prev_f, r, s, t)
            p, lam, y, y_raw = _recover(rho, r, s, t)
            # Tolerances admit roots where y or lam round to a hair below
            # zero (tangency with the polar boundary, deep-right points
            # hugging the z-axis ray); clamping moves the result by no
            # more than the same hair.  Spurious sign-flipped roots miss
            # by order scale and stay rejected.
            if y_raw >= -1e-11 * scale and lam >= -1e-9 * scale:
                return rho, p, max(lam, 0.0), y
        prev_k, prev_f = k, f
    raise FloatingPointError(
        f"no valid root for exponential-cone projection of ({r}, {s}, {t})"
    )


def _recover(rho, r, s, t):
    """Projected point and multiplier from the root.

    For rho < 0 the divisor 1 + a^2 (1 - rho) is at least one, so the
    direct formulas are safe.  For rho >= 0 that divisor can vanish (it
    does exactly when s = t = 0), so the multiplier is taken from the
    always-positive divisor 1 - rho + rho^2 >= 3/4 instead."""
    if rho < 0.0:
        a = math.exp(rho)
        den = 1.0 + a * a * (1.0 - rho)
        y = (s + t * a * (1.0 - rho)) / den
        lam = (s * a - t) / den
        z = t + lam
    else:
        e1 = math.exp(-rho)
        E = 1.0 - rho + rho * rho
        lam = (r - rho * s) * e1 / E
        z = t + lam
        y = z * e1
    y_raw = y
    y = max(y, 0.0)
    z = max(z, 0.0)
    return np.array([rho * y, y, z]), lam, y, y_raw


def project_expcone(v):
    """Projection onto the exponential cone.

    Returns (p, info): info carries the case label and, on the boundary
    case, the quantities the derivative needs (rho, lambda, y).
    """
    r, s, t = float(v[0]), float(v[1]), float(v[2])
    if in_expcone((r, s, t)):
        return np.array([r, s, t]), {"case": "interior"}
    if in_polar_expcone((r, s, t)):
        return np.zeros(3), {"case": "polar"}
    # Projection is 1-Lipschitz, so folding r, s in (0, 1e-12 scale] into
    # the r, s <= 0 face case perturbs the result by at most ~1e-12 scale,
    # and it keeps the boundary root (near r/s or 1 - s/r for these
    # face-hugging inputs) within a floating-point-sized scan range.
    scale = max(abs(r), abs(s), abs(t))
    if r <= 1e-12 * scale and s <= 1e-12 * scale:
        return np.array([min(r, 0.0), 0.0, max(t, 0.0)]), {"case": "third"}
    rho, p, lam, y = _solve_boundary(r, s, t)
    return p, {"case": "boundary", "rho": rho, "lam": lam, "y": y}


def dproject_expcone(v):
    """Jacobian of the exponential-cone projection at v.

    Returns (3x3 array, nonsmooth flag).  The flag marks points within
    tolerance of a case boundary, where the projection is not
    differentiable and the returned matrix is one generalized Jacobian.
    """
    r, s, t = float(v[0]), float(v[1]), float(v[2])
    scale = 1.0 + abs(r) + abs(s) + abs(t)
    tol = _NS_TOL * scale
    p, info = project_expcone(v)
    case = info["case"]
    if case == "interior":
        near = (not in_expcone((r, s, t), tol=-tol)) if s > 0 else True
        return np.eye(3), bool(near)
    if case == "polar":
        near = not in_polar_expcone((r, s, t), tol=-tol)
        return np.zeros((3, 3)), bool(near)
    if case == "third":
        J = np.diag([1.0, 0.0, 1.0 if t > 0.0 else 0.0])
        near = (abs(t) <= tol or r >= -tol or s >= -tol)
        return J, bool(near)
    rho, lam, y = info["rho"], info["lam"], info["y"]
    near = lam <= tol or y <= tol
    if y <= 0.0:
        if rho > 0.0:
            # deep-right degenerate point: projection hugs the z-axis ray
            # (0, 0, z), where only dz/dt survives at double precision
            return np.diag([0.0, 0.0, 1.0 if p[2] > 0.0 else 0.0]), True
        # degenerate boundary point; fall back to the third-region form
        return np.diag([1.0, 0.0, 1.0 if t > 0.0 else 0.0]), True
    a = math.exp(min(rho, 700.0))
    grad = np.array([a, a * (1.0 - rho), -1.0])
    H = (a / y) * np.array([
        [1.0, -rho, 0.0],
        [-rho, rho * rho, 0.0],
        [0.0, 0.0, 0.0],
    ])
    KKT = np.zeros((4, 4))
    KKT[:3, :3] = np.eye(3) + lam * H
    KKT[:3, 3] = grad
    KKT[3, :3] = grad
    try:
        Jfull = np.linalg.solve(KKT, np.vstack([np.eye(3),
                                                np.zeros((1, 3))]))
    except np.linalg.LinAlgError:
        return np.eye(3), True
    return Jfull[:3, :], bool(near)


def _exp_blocks(dims):
    nz, nl, ne = dims["zero"], dims["nonneg"], dims["exp"]
    return nz, nl, ne, nz + nl + 3 * ne


def project_cone(v, dims, dual=False):
    """Projection onto the product cone (dual=False) or its dual cone.

    The dual cone replaces the zero block by free variables, keeps the
    nonnegative block, and swaps in the dual exponential cone via the
    Moreau identity."""
    v = np.asarray(v, dtype=float)
    nz, nl, ne, m = _exp_blocks(dims)
    if v.shape != (m,):
        raise ValueError(f"vector has shape {v.shape}, expected ({m},)")
    out = np.empty(m)
    if dual:
        out[:nz] = v[:nz]
    else:
        out[:nz] = 0.0
    out[nz:nz + nl] = np.maximum(v[nz:nz + nl], 0.0)
    for k in range(ne):
        sl = slice(nz + nl + 3 * k, nz + nl + 3 * k + 3)
        if dual:
            p, _ = project_expcone(-v[sl])
            out[sl] = v[sl] + p
        else:
            p, _ = project_expcone(v[sl])
            out[sl] = p
    return out


def dproject_cone(v, dims, dual=False):
    """Derivative of ``project_cone`` as a sparse matrix, plus a flag set
    when any block sits within tolerance of a nondifferentiable point."""
    v = np.asarray(v, dtype=float)
    nz, nl, ne, m = _exp_blocks(dims)
    if v.shape != (m,):
        raise ValueError(f"vector has shape {v.shape}, expected ({m},)")
    blocks = []
    nonsmooth = False
    if nz:
        blocks.append(sp.identity(nz) if dual
                      else sp.csr_matrix((nz, nz)))
    if nl:
        w = v[nz:nz + nl]
        scale = 1.0 + np.abs(w)
        nonsmooth = nonsmooth or bool(np.any(np.abs(w) <= _NS_TOL * scale))
        blocks.append(sp.diags((w > 0.0).astype(float)))
    for k in range(ne):
        sl = slice(nz + nl + 3 * k, nz + nl + 3 * k + 3)
        if dual:
            J, ns = dproject_expcone(-v[sl])
            blocks.append(sp.csr_matrix(np.eye(3) - J))
        else:
            J, ns = dproject_expcone(v[sl])
            blocks.append(sp.csr_matrix(J))
        nonsmooth = nonsmooth or ns
    if not blocks:
        return sp.csr_matrix((0, 0)), False
    return sp.block_diag(blocks, format="csr"), nonsmooth
