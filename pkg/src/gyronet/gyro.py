"""Poincare-ball gyrovector primitives with hand-derived vector-Jacobian products.

Every function works on plain ``numpy`` arrays whose last axis is the ambient
dimension; leading axes are batch axes and broadcast against each other.  The
curvature of the ball is ``-c`` with ``c > 0`` and the ball radius is
``c ** -0.5``.

Each forward ``f`` has a partner ``f_backward(u, ...)`` that returns the input
gradients given the output gradient ``u`` (a row vector times the Jacobian).
Backward functions return gradients at the broadcast shape of the inputs;
reducing them back to the input shapes is the caller's job (the tape does it).

Forward functions here are the raw formulas.  The fused tape operations in
:mod:`gyronet.ops` wrap the manifold-valued ones with :func:`project`.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError

#: Norms below this take the analytic-limit branch of ``v / ||v||`` terms.
MIN_NORM = 1e-12
#: Boundary shell: projected points land at radius ``(1 - EPS_BOUNDARY) / sqrt(c)``.
EPS_BOUNDARY = 1e-5
# rescaled points may land a few ulps past the shell; leave them alone
_SHELL_SLACK = 1.0 + 8.0 * np.finfo(np.float64).eps


def _dot(x, y):
    x, y = np.broadcast_arrays(x, y)
    return np.einsum("...i,...i->...", x, y)[..., None]


def _sqnorm(x):
    return np.einsum("...i,...i->...", x, x)[..., None]


def _norm(x):
    return np.sqrt(_sqnorm(x))


def _check_c(c):
    if not c > 0:
        raise ContractError(f"curvature parameter c must be positive, got {c!r}")
    return math.sqrt(c)


def _check_dims(*arrays):
    dims = {np.shape(a)[-1] for a in arrays}
    if len(dims) != 1:
        raise ContractError(f"ambient dimensions differ: {sorted(dims)}")


def _safe(norm):
    """Split a norm array into (is_small mask, norm with small entries set to 1)."""
    small = norm < MIN_NORM
    return small, np.where(small, 1.0, norm)


def max_norm(c: float, eps: float = EPS_BOUNDARY) -> float:
    return (1.0 - eps) / math.sqrt(c)


# --------------------------------------------------------------------------
# projection


def project(x, c, eps=EPS_BOUNDARY):
    """Radially pull points outside the boundary shell back onto it."""
    sc = _check_c(c)
    limit = (1.0 - eps) / sc
    n = _norm(x)
    outside = n > limit * _SHELL_SLACK
    if not outside.any():
        return x
    return np.where(outside, x / np.where(outside, n, 1.0) * limit, x)


def project_backward(u, x, c, eps=EPS_BOUNDARY):
    sc = _check_c(c)
    limit = (1.0 - eps) / sc
    n = _norm(x)
    outside = n > limit * _SHELL_SLACK
    if not outside.any():
        return u
    n_safe = np.where(outside, n, 1.0)
    shrunk = limit * (u / n_safe - _dot(u, x) * x / n_safe**3)
    return np.where(outside, shrunk, u)


# --------------------------------------------------------------------------
# conformal factor


def conformal_factor(x, c):
    """``lambda_x = 2 / (1 - c ||x||^2)`` with a trailing singleton axis."""
    _check_c(c)
    return 2.0 / (1.0 - c * _sqnorm(x))


def conformal_factor_backward(u, x, c):
    """``u`` has the factor's shape (trailing singleton axis)."""
    return 4.0 * c * u / (1.0 - c * _sqnorm(x)) ** 2 * x


# --------------------------------------------------------------------------
# Mobius addition


def mobius_add_parts(x, y, c):
    """Mobius sum together with the scalars ``a``, ``b``, ``d`` its backward reuses."""
    _check_c(c)
    _check_dims(x, y)
    xy = _dot(x, y)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    a = 1.0 + 2.0 * c * xy + c * y2
    b = 1.0 - c * x2
    d = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return (a * x + b * y) / d, a, b, d


def mobius_add(x, y, c):
    return mobius_add_parts(x, y, c)[0]


def mobius_add_backward(u, x, y, c, saved=None):
    """Returns ``(u^T J_x, u^T J_y)``; ``saved`` may carry ``(a, b, d)``."""
    if saved is None:
        _, a, b, d = mobius_add_parts(x, y, c)
    else:
        a, b, d = saved
    ux = _dot(u, x)
    uy = _dot(u, y)
    theta = a * ux + b * uy
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    k = 2.0 * c / d
    grad_x = (a / d) * u - k * (uy + theta * c * y2 / d) * x + k * (ux - theta / d) * y
    grad_y = (b / d) * u + k * (ux - theta / d) * x + k * (ux - c * x2 * theta / d) * y
    return grad_x, grad_y


# --------------------------------------------------------------------------
# Mobius scalar multiplication


def mobius_scalar_mul(r, x, c):
    sc = _check_c(c)
    small, n = _safe(_norm(x))
    scaled = np.tanh(r * np.arctanh(np.minimum(sc * n, 1.0 - 1e-16))) / (sc * n) * x
    return np.where(small, r * x, scaled)


def mobius_scalar_mul_backward(u, r, x, c):
    """Returns ``(grad_r, grad_x)``; ``grad_r`` has the trailing singleton axis."""
    sc = _check_c(c)
    small, n = _safe(_norm(x))
    t = np.minimum(sc * n, 1.0 - 1e-16)
    at = np.arctanh(t)
    th = np.tanh(r * at)
    sech2 = 1.0 - th * th
    h = th / t
    dh = r * sech2 / ((1.0 - t * t) * t) - th / (t * t)
    ux = _dot(u, x)
    grad_x = h * u + ux * dh * sc / n * x
    grad_r = ux * sech2 * at / (sc * n)
    grad_x = np.where(small, r * u, grad_x)
    grad_r = np.where(small, 0.0, grad_r)
    return grad_r, grad_x


# --------------------------------------------------------------------------
# exponential / logarithmic maps at the origin


def exp0(v, c):
    sc = _check_c(c)
    small, n = _safe(_norm(v))
    return np.where(small, v, np.tanh(sc * n) / (sc * n) * v)


def exp0_backward(u, v, c):
    sc = _check_c(c)
    small, n = _safe(_norm(v))
    th = np.tanh(sc * n)
    coef = 1.0 / (n * n * np.cosh(sc * n) ** 2) - th / (sc * n**3)
    grad = _dot(u, v) * coef * v + th / (sc * n) * u
    return np.where(small, u, grad)


def log0(y, c):
    sc = _check_c(c)
    small, n = _safe(_norm(y))
    t = np.minimum(sc * n, 1.0 - 1e-16)
    return np.where(small, y, np.arctanh(t) / (sc * n) * y)


def log0_backward(u, y, c):
    sc = _check_c(c)
    small, n = _safe(_norm(y))
    t = np.minimum(sc * n, 1.0 - 1e-16)
    at = np.arctanh(t)
    coef = 1.0 / (n * n * (1.0 - t * t)) - at / (sc * n**3)
    grad = _dot(u, y) * coef * y + at / (sc * n) * u
    return np.where(small, u, grad)


# --------------------------------------------------------------------------
# exponential map at an arbitrary basepoint: exp_x(v) = x (+) z(x, v)


def _exp_direction(x, v, c):
    """``z(x, v) = tanh(sqrt(c) lambda_x ||v|| / 2) v / (sqrt(c) ||v||)``."""
    sc = math.sqrt(c)
    b = 1.0 - c * _sqnorm(x)
    small, n = _safe(_norm(v))
    arg = sc * n / b
    z = np.where(small, v / b, np.tanh(arg) / (sc * n) * v)
    return z, b, n, small, arg


def exp_at(x, v, c):
    _check_c(c)
    _check_dims(x, v)
    z = _exp_direction(x, v, c)[0]
    return mobius_add(x, z, c)


def exp_at_backward(u, x, v, c):
    """Chain the Mobius-add Jacobians with those of the direction map ``z``."""
    _check_c(c)
    sc = math.sqrt(c)
    z, b, n, small, arg = _exp_direction(x, v, c)
    gx, gz = mobius_add_backward(u, x, z, c)
    zv = _dot(gz, v)
    ch2 = np.cosh(arg) ** 2
    th = np.tanh(arg)
    gx = gx + 2.0 * c * zv / (ch2 * b * b) * x
    gv = zv * (1.0 / (n * n * ch2 * b) - th / (sc * n**3)) * v + th / (sc * n) * gz
    gv = np.where(small, gz / b, gv)
    return gx, gv


# --------------------------------------------------------------------------
# logarithmic map at an arbitrary basepoint: log_x(y) = f(x, (-x) (+) y)


def log_at(x, y, c):
    sc = _check_c(c)
    _check_dims(x, y)
    z = mobius_add(-x, y, c)
    b = 1.0 - c * _sqnorm(x)
    small, n = _safe(_norm(z))
    t = np.minimum(sc * n, 1.0 - 1e-16)
    return np.where(small, b * z, b * np.arctanh(t) / (sc * n) * z)


def log_at_backward(u, x, y, c):
    sc = _check_c(c)
    z = mobius_add(-x, y, c)
    b = 1.0 - c * _sqnorm(x)
    small, n = _safe(_norm(z))
    t = np.minimum(sc * n, 1.0 - 1e-16)
    at = np.arctanh(t)
    uz = _dot(u, z)
    ratio = np.where(small, 1.0, at / (sc * n))
    gx = -2.0 * c * ratio * uz * x
    gz = uz * (b / ((1.0 - t * t) * n * n) - at * b / (sc * n**3)) * z + ratio * b * u
    gz = np.where(small, b * u, gz)
    g_negx, gy = mobius_add_backward(gz, -x, y, c)
    return gx - g_negx, gy


# --------------------------------------------------------------------------
# distance


def distance(x, y, c):
    """Geodesic distance; the trailing axis is reduced away."""
    sc = _check_c(c)
    _check_dims(x, y)
    n = _norm(mobius_add(-x, y, c))[..., 0]
    return 2.0 / sc * np.arctanh(np.minimum(sc * n, 1.0 - 1e-16))


def distance_backward(u, x, y, c):
    """``u`` has the distance's shape.  The gradient at ``x == y`` is taken as 0."""
    z = mobius_add(-x, y, c)
    small, n = _safe(_norm(z))
    den = np.where(small, 1.0, (1.0 - c * n * n) * n)
    gz = np.where(small, 0.0, 2.0 * u[..., None] * z / den)
    g_negx, gy = mobius_add_backward(gz, -x, y, c)
    return -g_negx, gy


# --------------------------------------------------------------------------
# gyration and parallel transport


def _gyr_coeffs(x, y, z, c):
    x2, y2 = _sqnorm(x), _sqnorm(y)
    xy, xz, yz = _dot(x, y), _dot(x, z), _dot(y, z)
    cc = c * c
    A = -cc * xz * y2 + c * yz + 2.0 * cc * xy * yz
    B = -cc * yz * x2 - c * xz
    D = 1.0 + 2.0 * c * xy + cc * x2 * y2
    return A, B, D, (x2, y2, xy, xz, yz)


def gyration(x, y, z, c):
    """``gyr[x, y] z`` in closed form (equal to ``-(x+y) + (x + (y + z))``)."""
    _check_c(c)
    _check_dims(x, y, z)
    A, B, D, _ = _gyr_coeffs(x, y, z, c)
    return z + 2.0 * (A * x + B * y) / D


def gyration_backward(u, x, y, z, c):
    A, B, D, (x2, y2, xy, xz, yz) = _gyr_coeffs(x, y, z, c)
    cc = c * c
    gN = 2.0 * u / D
    gD = -_dot(gN, A * x + B * y) / D
    gA = _dot(gN, x)
    gB = _dot(gN, y)
    g_xz = -cc * y2 * gA - c * gB
    g_yz = (c + 2.0 * cc * xy) * gA - cc * x2 * gB
    g_xy = 2.0 * cc * yz * gA + 2.0 * c * gD
    g_x2 = -cc * yz * gB + cc * y2 * gD
    g_y2 = -cc * xz * gA + cc * x2 * gD
    gx = A * gN + g_xz * z + g_xy * y + 2.0 * g_x2 * x
    gy = B * gN + g_yz * z + g_xy * x + 2.0 * g_y2 * y
    gz = u + g_xz * x + g_yz * y
    return gx, gy, gz


def parallel_transport(x, y, v, c):
    """Carry ``v`` from the tangent space at ``x`` to the one at ``y``."""
    lx = conformal_factor(x, c)
    ly = conformal_factor(y, c)
    return lx / ly * gyration(y, -x, v, c)


def parallel_transport_backward(u, x, y, v, c):
    lx = conformal_factor(x, c)
    ly = conformal_factor(y, c)
    g = gyration(y, -x, v, c)
    gs = _dot(u, g)
    gy_, g_negx, gv = gyration_backward(lx / ly * u, y, -x, v, c)
    gx = conformal_factor_backward(gs / ly, x, c) - g_negx
    gy = gy_ + conformal_factor_backward(-gs * lx / (ly * ly), y, c)
    return gx, gy, gv


# --------------------------------------------------------------------------
# multinomial logistic regression scores and the fully connected layer


def _mlr_parts(x, Z, r, c):
    sc = _check_c(c)
    if Z.ndim != 2 or x.shape[-1] != Z.shape[0] or r.shape != (Z.shape[1],):
        raise ContractError(
            f"shape mismatch: x {x.shape}, Z {Z.shape}, r {r.shape}"
        )
    zn = np.sqrt(np.sum(Z * Z, axis=0))
    zero_col = zn < MIN_NORM
    zn_safe = np.where(zero_col, 1.0, zn)
    Zhat = Z / zn_safe
    lam = conformal_factor(x, c)
    xz = x @ Zhat
    ch = np.cosh(2.0 * sc * r)
    sh = np.sinh(2.0 * sc * r)
    p = sc * lam * xz * ch - (lam - 1.0) * sh
    v = np.where(zero_col, 0.0, 2.0 / sc * zn * np.arcsinh(p))
    return v, dict(Zhat=Zhat, zn=zn, zero_col=zero_col, lam=lam, xz=xz, ch=ch, sh=sh, p=p)


def mlr_scores(x, Z, r, c):
    """Signed-distance scores of ``x`` against the hyperplanes ``(Z[:, k], r[k])``."""
    return _mlr_parts(x, Z, r, c)[0]


def mlr_scores_backward(u, x, Z, r, c, parts=None):
    """Returns ``(grad_x, grad_Z, grad_r)`` given the score gradient ``u``.

    A zero column has no gradient in the usual sense (the score is positively
    homogeneous of degree one in ``z_k``).  It receives the gradient of the
    first-order expansion of the score around ``z_k = 0``, so the column can
    leave zero under training.
    """
    sc = math.sqrt(c)
    if parts is None:
        _, parts = _mlr_parts(x, Z, r, c)
    Zhat, zn, zero_col = parts["Zhat"], parts["zn"], parts["zero_col"]
    lam, xz, ch, sh, p = parts["lam"], parts["xz"], parts["ch"], parts["sh"], parts["p"]
    root = np.sqrt(1.0 + p * p)
    gp = np.where(zero_col, 0.0, u * (2.0 / sc) * zn / root)
    g_zn = np.where(zero_col, 0.0, u * (2.0 / sc) * np.arcsinh(p))
    # p = sqrt(c) lam xz ch - (lam - 1) sh
    g_lam = np.sum(gp * (sc * xz * ch - sh), axis=-1, keepdims=True)
    g_xz = gp * sc * lam * ch
    grad_x = g_xz @ Zhat.T + conformal_factor_backward(g_lam, x, c)
    lead = x.reshape(-1, x.shape[-1])
    g_xz2 = g_xz.reshape(-1, Z.shape[1])
    g_Zhat = lead.T @ g_xz2
    g_r = np.sum(
        (gp * (sc * lam * xz * 2.0 * sc * sh - (lam - 1.0) * 2.0 * sc * ch)).reshape(-1, Z.shape[1]),
        axis=0,
    )
    proj = np.sum(Zhat * g_Zhat, axis=0)
    g_Z = (g_Zhat - Zhat * proj) / np.where(zero_col, 1.0, zn) + Zhat * np.sum(
        g_zn.reshape(-1, Z.shape[1]), axis=0
    )
    if np.any(zero_col):
        # d/dz of the linearisation 2 lam ch <x, z> / sqrt(1 + p0^2) at z = 0
        p0 = -(lam - 1.0) * sh
        lin = (u * 2.0 * lam * ch / np.sqrt(1.0 + p0 * p0)).reshape(-1, Z.shape[1])
        g_zero = lead.T @ lin
        g_Z = np.where(zero_col, g_zero, g_Z)
    return grad_x, g_Z, g_r


def _fc_tail(v, c):
    sc = math.sqrt(c)
    w = np.sinh(sc * v) / sc
    s = np.sqrt(1.0 + c * _sqnorm(w))
    return w / (1.0 + s), w, s


def fc_forward(x, Z, r, c):
    """Poincare fully connected layer ``B^m -> B^n``."""
    v = mlr_scores(x, Z, r, c)
    return _fc_tail(v, c)[0]


def fc_backward(u, x, Z, r, c):
    sc = math.sqrt(c)
    v, parts = _mlr_parts(x, Z, r, c)
    _, w, s = _fc_tail(v, c)
    den = 1.0 + s
    gw = u / den - c * _dot(u, w) * w / (s * den * den)
    gv = gw * np.cosh(sc * v)
    return mlr_scores_backward(gv, x, Z, r, c, parts)


# --------------------------------------------------------------------------
# Poincare midpoint


def midpoint(x, c, axis=-2):
    """Closed-form midpoint over ``axis`` (the point axis, not the vector axis)."""
    lam = conformal_factor(x, c)
    num = np.sum(lam * x, axis=axis)
    den = np.sum(lam - 1.0, axis=axis)
    return mobius_scalar_mul(0.5, project(num / den, c), c)


def midpoint_backward(u, x, c, axis=-2):
    lam = conformal_factor(x, c)
    num = np.sum(lam * x, axis=axis)
    den = np.sum(lam - 1.0, axis=axis)
    inner = num / den
    clamped = project(inner, c)
    _, g_clamped = mobius_scalar_mul_backward(u, 0.5, clamped, c)
    g_inner = project_backward(g_clamped, inner, c)
    g_num = np.expand_dims(g_inner / den, axis)
    g_den = np.expand_dims(-_dot(g_inner, inner) / den, axis)
    g_lam = _dot(g_num, x) + g_den
    return lam * g_num + conformal_factor_backward(g_lam, x, c)


# --------------------------------------------------------------------------
# beta-concatenation


def beta_n(n: int) -> float:
    """``B(n / 2, 1 / 2)``."""
    return math.exp(math.lgamma(n / 2) + math.lgamma(0.5) - math.lgamma(n / 2 + 0.5))


def beta_concat(parts, c):
    """Concatenate ball points through the tangent space at the origin."""
    if not parts:
        raise ContractError("beta_concat needs at least one part")
    dims = [p.shape[-1] for p in parts]
    n = sum(dims)
    bn = beta_n(n)
    logs = [log0(p, c) * (bn / beta_n(k)) for p, k in zip(parts, dims)]
    return exp0(np.concatenate(logs, axis=-1), c)
