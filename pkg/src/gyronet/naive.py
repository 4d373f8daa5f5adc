"""Compositional versions of the fused primitives, built from elementary tape nodes.

These exist for the graph-size comparison and as an independent gradient path
in tests.  They follow the same formulas and zero-norm branches as
:mod:`gyronet.gyro` but let the tape differentiate every intermediate step.
"""

from __future__ import annotations

import math

from . import engine as E
from .gyro import _SHELL_SLACK, EPS_BOUNDARY, MIN_NORM


def _norm_safe(x):
    sq = E.dot(x, x)
    small = E.data(sq) < MIN_NORM * MIN_NORM
    return E.sqrt(E.where(small, 1.0, sq)), small


def project(x, c):
    limit = (1.0 - EPS_BOUNDARY) / math.sqrt(c)
    n, _ = _norm_safe(x)
    outside = E.data(n) > limit * _SHELL_SLACK
    return E.where(outside, x / n * limit, x)


def conformal_factor(x, c):
    return 2.0 / (1.0 - c * E.dot(x, x))


def _mobius_add_raw(x, y, c):
    xy = E.dot(x, y)
    x2 = E.dot(x, x)
    y2 = E.dot(y, y)
    a = 1.0 + 2.0 * c * xy + c * y2
    b = 1.0 - c * x2
    d = 1.0 + 2.0 * c * xy + (c * c) * x2 * y2
    return (a * x + b * y) / d


def mobius_add(x, y, c):
    return project(_mobius_add_raw(x, y, c), c)


def mobius_scalar_mul(r, x, c):
    sc = math.sqrt(c)
    n, small = _norm_safe(x)
    t = sc * n
    scaled = E.tanh(r * E.arctanh(t)) / t * x
    return project(E.where(small, r * x, scaled), c)


def exp0(v, c):
    sc = math.sqrt(c)
    n, small = _norm_safe(v)
    return project(E.where(small, v, E.tanh(sc * n) / (sc * n) * v), c)


def log0(y, c):
    sc = math.sqrt(c)
    n, small = _norm_safe(y)
    return E.where(small, y, E.arctanh(sc * n) / (sc * n) * y)


def exp_at(x, v, c):
    sc = math.sqrt(c)
    b = 1.0 - c * E.dot(x, x)
    n, small = _norm_safe(v)
    z = E.where(small, v / b, E.tanh(sc * n / b) / (sc * n) * v)
    return project(_mobius_add_raw(x, z, c), c)


def log_at(x, y, c):
    sc = math.sqrt(c)
    z = _mobius_add_raw(-x, y, c)
    b = 1.0 - c * E.dot(x, x)
    n, small = _norm_safe(z)
    return E.where(small, b * z, b * E.arctanh(sc * n) / (sc * n) * z)


def distance(x, y, c):
    sc = math.sqrt(c)
    n, small = _norm_safe(_mobius_add_raw(-x, y, c))
    d = E.where(small, 0.0, (2.0 / sc) * E.arctanh(sc * n))
    return d[..., 0]


def gyration(x, y, z, c):
    cc = c * c
    x2, y2 = E.dot(x, x), E.dot(y, y)
    xy, xz, yz = E.dot(x, y), E.dot(x, z), E.dot(y, z)
    A = -cc * xz * y2 + c * yz + 2.0 * cc * xy * yz
    B = -cc * yz * x2 - c * xz
    D = 1.0 + 2.0 * c * xy + cc * x2 * y2
    return z + 2.0 * (A * x + B * y) / D


def parallel_transport(x, y, v, c):
    return conformal_factor(x, c) / conformal_factor(y, c) * gyration(y, -x, v, c)


def mlr_scores(x, Z, r, c):
    sc = math.sqrt(c)
    sq = E.esum(E.square(Z), axis=0)
    zero_col = E.data(sq) < MIN_NORM * MIN_NORM
    zn = E.sqrt(E.where(zero_col, 1.0, sq))
    lam = conformal_factor(x, c)
    xz = E.matmul(x, Z / zn)
    ch = E.cosh(2.0 * sc * r)
    sh = E.sinh(2.0 * sc * r)
    p = sc * lam * xz * ch - (lam - 1.0) * sh
    return E.where(zero_col, 0.0, (2.0 / sc) * zn * E.arcsinh(p))


def fc(x, Z, r, c):
    sc = math.sqrt(c)
    w = E.sinh(sc * mlr_scores(x, Z, r, c)) / sc
    s = E.sqrt(1.0 + c * E.dot(w, w))
    return project(w / (1.0 + s), c)


def midpoint(x, c):
    lam = conformal_factor(x, c)
    num = E.esum(lam * x, axis=-2)
    den = E.esum(lam - 1.0, axis=-2)
    return mobius_scalar_mul(0.5, project(num / den, c), c)


def relu_p(x, c):
    return exp0(E.relu(log0(x, c)), c)
