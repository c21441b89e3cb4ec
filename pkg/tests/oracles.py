"""Closed-form reference values, written independently of the package.

Each function derives its value from first principles (ODE solutions,
eigen-expansions, special-function identities). The FROZEN table pins the
numbers once; ``test_oracles.py`` checks the table against the functions so
that neither can drift silently.
"""

import math

import numpy as np
from scipy import integrate
from scipy.special import gamma


def brownian_exit_time(x):
    """Solves u''/2 = -1 on (0, 1) with u(0) = u(1) = 0."""
    x = np.asarray(x, dtype=float)
    return x * (1.0 - x)


def getoor_mean_exit(x, s, d=1):
    """E_x tau for the isotropic s-stable process with symbol |xi|^s on the unit ball."""
    c = gamma(d / 2) / (2**s * gamma(1 + s / 2) * gamma((d + s) / 2))
    r2 = np.sum(np.atleast_2d(np.asarray(x, dtype=float)) ** 2, axis=-1)
    return c * (1.0 - r2) ** (s / 2)


def brownian_gauge(x, c=1.0):
    """Solves v''/2 = c v on (0, 1) with v = 1 at both ends."""
    k = math.sqrt(2.0 * c)
    return np.cosh(k * (np.asarray(x, dtype=float) - 0.5)) / math.cosh(k / 2)


def brownian_sine_semigroup(x, t):
    """P_t sin(pi .) = exp(-pi^2 t / 2) sin(pi x) for the killed process on (0, 1)."""
    return math.exp(-np.pi**2 * t / 2) * np.sin(np.pi * np.asarray(x, dtype=float))


def brownian_eigen():
    """Principal eigenvalue and unit-mass eigenfunction of -(1/2) d^2/dx^2 on (0, 1)."""
    return np.pi**2 / 2, (lambda x: 0.5 * np.pi * np.sin(np.pi * np.asarray(x, dtype=float)))


def brownian_heat_kernel(t, x, y, terms=200):
    """Sine-series transition density of the killed process on (0, 1)."""
    k = np.arange(1, terms + 1)[:, None, None]
    x = np.asarray(x, dtype=float)[None, :, None]
    y = np.asarray(y, dtype=float)[None, None, :]
    return 2.0 * np.sum(np.exp(-(np.pi * k) ** 2 * t / 2) * np.sin(np.pi * k * x) * np.sin(np.pi * k * y), axis=0)


def stable_symbol_quadrature(xi, s):
    """int (1 - cos(xi y)) C |y|^{-1-s} dy on the line, by direct quadrature."""
    c = 2**s * gamma((1 + s) / 2) / (math.sqrt(math.pi) * abs(gamma(-s / 2)))
    f = lambda y: (1.0 - math.cos(xi * y)) * y ** (-1.0 - s)  # noqa: E731
    inner, _ = integrate.quad(f, 0.0, 1.0, limit=400)
    outer, _ = integrate.quad(lambda y: y ** (-1.0 - s), 1.0, np.inf)
    osc, _ = integrate.quad(lambda y: y ** (-1.0 - s), 1.0, np.inf, weight="cos", wvar=xi)
    return 2.0 * c * (inner + outer - osc)


def eigen_bound_constant(lam, c):
    """c / ((lambda + c) 2e), the constant of the eigenfunction bound for u with sup 1, g = 0."""
    return c / ((lam + c) * 2.0 * math.e)


FROZEN = {
    "exit_time_brownian_half": 0.25,
    "getoor_s1_origin": 1.0,
    "gauge_brownian_half": 0.7932781817463869,
    "w_brownian_half": 0.2067218182536131,
    "semigroup_sine_half_t01": 0.6104980252657972,
    "lambda_brownian": 4.934802200544679,
    "eigen_bound_constant_brownian_c1": 0.03099340371762343,
    "stable_symbol_s1_xi5": 5.0,
}
