"""Independent reference computations used to freeze expected values in the tests.

Nothing here imports obleig: each routine is a separate route to a number the
package also computes (closed forms, dense matrices, brute-force geometry).
"""

import math

import numpy as np


def bisect(f, lo, hi, tol=1e-14, max_iter=200):
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def robin_cross_section(gamma):
    """Principal eigenvalue of -phi'' - phi on (-1, 1) with phi' + gamma phi = 0 (outward).

    phi = cos(alpha y) with alpha tan(alpha) = gamma, eigenvalue alpha^2 - 1.
    """
    alpha = bisect(lambda a: a * math.tan(a) - gamma, 1e-12, math.pi / 2 - 1e-12)
    return alpha * alpha - 1.0, alpha


def dirichlet_strip_rectangle(r):
    """Separable eigenvalue of -(Laplacian + 1) on (-r, r) x (-1, 1), Dirichlet all round."""
    return math.pi ** 2 / 4 + math.pi ** 2 / (4 * r * r) - 1.0


def dense_dirichlet_1d(c, a, b, n):
    """Smallest eigenvalue of the dense 3-point matrix of -(u'' + c u) on (a, b), u(a) = u(b) = 0."""
    x = np.linspace(a, b, n + 1)[1:-1]
    h = (b - a) / n
    m = x.size
    M = np.zeros((m, m))
    idx = np.arange(m)
    M[idx, idx] = 2.0 / h ** 2 - c(x)
    M[idx[:-1], idx[:-1] + 1] = -1.0 / h ** 2
    M[idx[1:], idx[1:] - 1] = -1.0 / h ** 2
    return float(np.linalg.eigvalsh(M)[0])


def comb_integral(a, b):
    """Exact integral over [a, b] of 1 - 2 * indicator(union of [2^n, 2^n + n], n >= 1)."""
    total = b - a
    n = 1
    while 2.0 ** n <= b:
        lo, hi = 2.0 ** n, 2.0 ** n + n
        total -= 2.0 * max(0.0, min(b, hi) - max(a, lo))
        n += 1
    return total


def comb_average(y, r):
    return comb_integral(y - r, y + r) / (2 * r)


def disc_in_strip_area(y2, rho=1.0, half_width=1.0):
    """Area of the disc of radius rho about (0, y2) inside |x2| < half_width (exact)."""
    def cap(dist):
        if dist >= rho:
            return 0.0
        return rho * rho * math.acos(dist / rho) - dist * math.sqrt(rho * rho - dist * dist)

    return math.pi * rho * rho - cap(half_width - y2) - cap(half_width + y2)


def annuli_union_boundary_distance(p, n_max=4, w=0.5, n_samples=200000):
    """Brute-force distance from p to a dense sample of the annuli-union boundary."""
    p = np.asarray(p, dtype=float)
    pieces = []
    xs = np.linspace(-40, 40, n_samples)
    for s in (w, -w):
        pts = np.stack([xs, np.full_like(xs, s)], axis=1)
        pieces.append(pts)
    th = np.linspace(0, 2 * np.pi, n_samples)
    for n in range(1, n_max + 1):
        for rad in (2.0 ** n, 2.0 ** n + 1.0):
            pieces.append(np.stack([rad * np.cos(th), rad * np.sin(th)], axis=1))
    cloud = np.concatenate(pieces)

    def inside(q):
        rr = np.linalg.norm(q, axis=1)
        ok = np.abs(q[:, 1]) < w
        for n in range(1, n_max + 1):
            ok |= (rr > 2.0 ** n) & (rr < 2.0 ** n + 1.0)
        return ok

    # keep only sample points that really sit on the boundary of the union
    eps = 1e-6
    nrm = cloud / np.maximum(np.linalg.norm(cloud, axis=1, keepdims=True), 1e-300)
    off = np.where(np.abs(cloud[:, 1:2]) == w, np.array([[0.0, 1.0]]), nrm)
    on = inside(cloud + eps * off) != inside(cloud - eps * off)
    return float(np.min(np.linalg.norm(cloud[on] - p, axis=1)))


def growth_ratio_formula(n, omega1_mass, f_sup, d):
    vb = {1: 2.0, 2: math.pi}[d]
    return ((vb / omega1_mass) * f_sup * n * (n + 1) ** d + 1.0) ** (1.0 / n) - 1.0


def fd_second_derivative(f, x, step=1e-3):
    return (f(x + step) - 2 * f(x) + f(x - step)) / step ** 2


def fd_first_derivative(f, x, step=1e-4):
    return (f(x + step) - f(x - step)) / (2 * step)


def ce3_c(x):
    t = np.clip(x + 1.0, 0.0, 1.0)
    return -1.0 + 2.0 * (3 * t ** 2 - 2 * t ** 3)


def ce3_subsolution_residual(x, k=10.0):
    """(L - 1) psi for L = u'' + k u' + c u and psi = 1 / (1 + exp(-x)), by finite differences."""
    psi = lambda z: 1.0 / (1.0 + np.exp(-z))
    return fd_second_derivative(psi, x) + k * fd_first_derivative(psi, x) + (ce3_c(x) - 1.0) * psi(x)


def chi_closed_form(t):
    """(1 - t)(1 - t^2)^3 on [-1, 1]."""
    return (1 - t) * (1 - t * t) ** 3 if abs(t) <= 1 else 0.0
