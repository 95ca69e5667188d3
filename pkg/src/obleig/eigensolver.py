"""Principal eigenpairs of truncated mixed problems, truncation sweeps and certificates."""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .errors import (ConfigError, MismatchedScenario, NoConvergence, ObleigError, PositivityLoss,
                     ResolventSingular, SampleTooCoarse, UndifferentiableField, ZeroVector)
from .expr import Expression, point_env
from .geometry import boundary_samples, make_domain, truncate
from .operators import assemble


@dataclass
class EigResult:
    lam: float
    eigenfunction: np.ndarray
    residual: float
    iterations: int
    positivity_margin: float
    scale: float
    collatz_wielandt: tuple = (math.nan, math.nan)

    @property
    def relative_residual(self):
        return self.residual / self.scale if self.scale else self.residual


def _collatz_wielandt(M, v):
    if np.min(v) <= 0:
        return math.nan, math.nan
    r = (M @ v) / v
    return float(np.min(r)), float(np.max(r))


def principal_eigenpair(system, tol=1e-8, max_iter=500, check_positivity=True):
    """Shifted inverse iteration for the bottom eigenvalue of M.

    The shift starts below the smallest Gershgorin bound and every 5 steps is
    moved up to just below min(Rayleigh quotient, Collatz-Wielandt lower bound),
    which stays under the principal eigenvalue for positive iterates.
    """
    M = system.matrix.tocsr()
    n = system.size
    if n == 0:
        raise ConfigError("empty system")
    if not tol > 0:
        raise ConfigError("tol must be positive")
    scale = system.scale if system.scale > 0 else 1.0
    W = system.weights if system.symmetric else np.ones(n)
    diag = M.diagonal()
    radius = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(diag)
    sigma = float(np.min(diag - radius)) - 1e-3 * scale
    I = sps.identity(n, format="csc")
    lu = splu((M - sigma * I).tocsc())
    v = np.ones(n)
    lam = math.nan
    res = math.inf
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        k = int(np.argmax(np.abs(w)))
        if w[k] == 0 or not np.all(np.isfinite(w)):
            raise NoConvergence("inverse iteration broke down")
        v = w / w[k]
        Mv = M @ v
        lam = float(np.dot(W * v, Mv) / np.dot(W * v, v))
        res = float(np.max(np.abs(Mv - lam * v)))
        if res < tol * scale:
            break
        if it % 5 == 0:
            lo, hi = _collatz_wielandt(M, v)
            if math.isfinite(lo):
                target = min(lam, lo)
                margin = max(0.05 * (hi - lo), 1e-9 * scale)
            else:
                target = lam - res
                margin = max(res, 1e-9 * scale)
            new = target - margin
            if new > sigma:
                sigma = new
                lu = splu((M - sigma * I).tocsc())
    else:
        raise NoConvergence(f"no convergence after {max_iter} iterations (residual {res:.3g})")
    margin = float(np.min(v))
    if check_positivity and margin < -tol:
        raise PositivityLoss(f"eigenvector changes sign (min {margin:.3g})")
    return EigResult(lam, v, res, it, margin, scale, _collatz_wielandt(M, v))


def rayleigh_quotient(grid, L, gamma, v):
    """Discrete quadratic form [int(grad v.A grad v - c v^2) + int_bd gamma v^2] / int v^2.

    v lives on the grid nodes and vanishes on the cap. Gradients are taken
    on lattice edges (midpoint rule on the dual edge region), cap edges use
    the cut length theta*h, and the boundary term uses the measured
    boundary piece of each cut cell.
    """
    if not L.selfadjoint:
        raise ConfigError("the Rayleigh quotient needs the self-adjoint form")
    if L.A.has_cross_terms():
        raise ConfigError("the Rayleigh quotient supports diagonal diffusion only")
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.size,):
        raise ConfigError(f"vector of length {v.size} for a grid of {grid.size} nodes")
    den = float(np.sum(grid.volumes * v * v))
    if den == 0:
        raise ZeroVector("v vanishes identically")
    d, h = grid.dimension, grid.spacing
    Av = L.A(grid.points)
    num = 0.0
    for slot, (k, sgn) in enumerate(grid.directions()):
        area = grid.face_fraction[:, slot] * h ** (d - 1)
        j = grid.neighbors[:, slot]
        if sgn == 1:
            e = j >= 0
            a = 0.5 * (Av[e, k, k] + Av[j[e], k, k])
            grad = (v[j[e]] - v[e]) / h
            num += float(np.sum(a * area[e] * h * grad * grad))
        theta = grid.cap_theta[:, slot]
        c = np.isfinite(theta)
        seg = theta[c] * h
        grad = -v[c] / seg
        num += float(np.sum(Av[c, k, k] * area[c] * seg * grad * grad))
    num -= float(np.sum(grid.volumes * L.c(grid.points) * v * v))
    b = grid.boundary_measure > 0
    if np.any(b):
        g = gamma(grid.node_coords[b]) if callable(gamma) else np.full(int(b.sum()), float(gamma))
        num += float(np.sum(grid.boundary_measure[b] * g * v[b] ** 2))
    return num / den


# sweeps -------------------------------------------------------------------

def extrapolate(radii, values):
    """Fit v(r) = v_inf + a/r^2 on the last three finite entries; fall back to the last value."""
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    r, v = r[ok], v[ok]
    if v.size == 0:
        return math.nan, "none"
    if v.size < 3:
        return float(v[-1]), "last"
    rr, vv = r[-3:], v[-3:]
    X = np.stack([np.ones(3), 1.0 / rr ** 2], axis=1)
    (v_inf, a), *_ = np.linalg.lstsq(X, vv, rcond=None)
    if a < 0:
        return float(v[-1]), "last"
    return float(v_inf), "fit"


def _spacing(h_rule, r):
    return float(h_rule(r)) if callable(h_rule) else float(h_rule)


@dataclass
class SweepResult:
    radii: list
    lambdas: list
    lambdaB_estimate: float
    residuals: list
    iterations: list
    spacings: list
    scales: list
    centers: list = None
    LambdaB_estimate: float = None
    sup_lambdas: list = None
    argmax_centers: list = None
    per_center: list = None
    monotonicity_violation: float = 0.0
    extrapolation: str = "fit"
    errors: list = field(default_factory=list)
    positivity_margins: list = None

    def rows(self):
        """CSV rows center_x, center_y, r, h, lambda, residual, iterations."""
        out = []
        centers = self.centers or [[0.0]]
        table = self.per_center or [self.lambdas]
        res_table = getattr(self, "_res_table", None) or [self.residuals]
        it_table = getattr(self, "_it_table", None) or [self.iterations]
        for ci, c in enumerate(centers):
            cx = float(c[0])
            cy = float(c[1]) if len(c) > 1 else 0.0
            for i, r in enumerate(self.radii):
                out.append({"center_x": cx, "center_y": cy, "r": float(r), "h": self.spacings[i],
                            "lambda": table[ci][i], "residual": res_table[ci][i],
                            "iterations": it_table[ci][i]})
        return out


def _solve_radius(domain, y, L, B, r, h, tol):
    grid = truncate(domain, y, r, h)
    system = assemble(grid, L, B)
    return principal_eigenpair(system, tol=tol), system


def _monotonicity(lams, scales):
    worst = 0.0
    for i in range(len(lams) - 1):
        a, b = lams[i], lams[i + 1]
        if math.isfinite(a) and math.isfinite(b):
            worst = max(worst, b - a)
    return worst


def truncation_sweep(domain, y, L, B, radii, h_rule, tol=1e-8):
    """lambda(y, r) over increasing radii and the a/r^2 extrapolation of the limit."""
    domain = make_domain(domain)
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ConfigError("radii must be increasing")
    lams, res, its, hs, scales, margins, errors = [], [], [], [], [], [], []
    for r in radii:
        h = _spacing(h_rule, r)
        hs.append(h)
        try:
            out, system = _solve_radius(domain, y, L, B, r, h, tol)
            lams.append(out.lam)
            res.append(out.residual)
            its.append(out.iterations)
            scales.append(out.scale)
            margins.append(out.positivity_margin)
            errors.append(None)
        except ObleigError as exc:
            lams.append(math.nan)
            res.append(math.nan)
            its.append(0)
            scales.append(math.nan)
            margins.append(math.nan)
            errors.append(type(exc).__name__)
    est, how = extrapolate(radii, lams)
    return SweepResult(radii, lams, est, res, its, hs, scales,
                       centers=[list(map(float, np.atleast_1d(y)))],
                       monotonicity_violation=_monotonicity(lams, scales),
                       extrapolation=how, errors=errors, positivity_margins=margins)


def lambda_global_sweep(domain, centers, L, B, radii, h_rule, tol=1e-8):
    """sup over the given centers of lambda(y, r), and its extrapolated limit."""
    domain = make_domain(domain)
    if not centers:
        raise ConfigError("centers must be nonempty")
    sweeps = [truncation_sweep(domain, c, L, B, radii, h_rule, tol) for c in centers]
    table = np.array([s.lambdas for s in sweeps], dtype=float)
    sup, arg = [], []
    for i in range(len(radii)):
        col = table[:, i]
        if np.all(np.isnan(col)):
            sup.append(math.nan)
            arg.append(None)
        else:
            j = int(np.nanargmax(col))
            sup.append(float(col[j]))
            arg.append([float(t) for t in np.atleast_1d(centers[j])])
    Lam, _ = extrapolate(radii, sup)
    first = sweeps[0]
    out = SweepResult(first.radii, first.lambdas, first.lambdaB_estimate, first.residuals,
                      first.iterations, first.spacings, first.scales,
                      centers=[[float(t) for t in np.atleast_1d(c)] for c in centers],
                      LambdaB_estimate=Lam, sup_lambdas=sup, argmax_centers=arg,
                      per_center=table.tolist(),
                      monotonicity_violation=max(s.monotonicity_violation for s in sweeps),
                      extrapolation=first.extrapolation,
                      errors=[e for s in sweeps for e in s.errors],
                      positivity_margins=[m for s in sweeps for m in s.positivity_margins])
    out._res_table = [s.residuals for s in sweeps]
    out._it_table = [s.iterations for s in sweeps]
    out.center_estimates = [s.lambdaB_estimate for s in sweeps]
    return out


# certificates -------------------------------------------------------------

CLASSES = ("positive", "inf_positive", "bounded")


@dataclass
class Certificate:
    phi: str
    lam: float
    sense: str
    classes: frozenset
    box: list
    h: float
    margin: float = 1e-12
    bound: float = math.inf
    domain: object = None
    name: str = ""

    def __post_init__(self):
        if self.sense not in ("supersolution", "subsolution"):
            raise ConfigError(f"unknown sense {self.sense!r}")
        self.classes = frozenset(self.classes)
        bad = self.classes - set(CLASSES)
        if bad:
            raise ConfigError(f"unknown classes {sorted(bad)}")


@dataclass
class CertificateReport:
    passed: bool
    lam: float
    sense: str
    classes: list
    implied_bound: dict
    worst_interior_slack: float
    worst_boundary_slack: float
    min_phi: float
    max_phi: float
    samples: int
    label: str
    derivatives: str
    name: str = ""

    def to_json(self):
        return {"name": self.name, "pass": self.passed, "lambda": self.lam, "sense": self.sense,
                "classes": self.classes, "implied_bound": self.implied_bound,
                "worst_interior_slack": self.worst_interior_slack,
                "worst_boundary_slack": self.worst_boundary_slack,
                "min_phi": self.min_phi, "max_phi": self.max_phi, "samples": self.samples,
                "label": self.label, "derivatives": self.derivatives}


def implied_bound(sense, classes, lam):
    """Which generalised eigenvalue a passing certificate bounds, and on which side."""
    classes = set(classes)
    if sense == "supersolution":
        if {"inf_positive", "bounded"} <= classes:
            q = "lambda_pb"
        elif "inf_positive" in classes:
            q = "lambda_p"
        elif "bounded" in classes:
            q = "lambda_b"
        else:
            q = "lambda"
        return {"quantity": q, "side": "lower", "value": float(lam)}
    if {"positive", "bounded"} <= classes or "bounded" in classes:
        return {"quantity": "mu_b", "side": "upper", "value": float(lam)}
    return None


class _Derivs:
    """Value, gradient and Hessian of phi: symbolic when possible, else 4th-order differences."""

    def __init__(self, text, d):
        self.ex = Expression(text)
        bad = set(self.ex.variables) - {"x", "y"}
        if bad:
            raise ConfigError(f"test function may only use x, y: {text!r}")
        self.d = d
        names = ["x", "y"][:d]
        try:
            self.grad = [self.ex.diff(a) for a in names]
            self.hess = [[self.grad[i].diff(names[j]) for j in range(d)] for i in range(d)]
            self.mode = "symbolic"
        except UndifferentiableField:
            self.mode = "finite_difference"

    def value(self, p):
        return self.ex(**point_env(p))

    def _shift(self, p, k, t):
        q = p.copy()
        q[:, k] += t
        return self.value(q)

    def gradient(self, p):
        if self.mode == "symbolic":
            return np.stack([g(**point_env(p)) for g in self.grad], axis=1)
        e = 1e-3
        return np.stack([(-self._shift(p, k, 2 * e) + 8 * self._shift(p, k, e)
                          - 8 * self._shift(p, k, -e) + self._shift(p, k, -2 * e)) / (12 * e)
                         for k in range(self.d)], axis=1)

    def hessian(self, p):
        n = p.shape[0]
        H = np.zeros((n, self.d, self.d))
        if self.mode == "symbolic":
            env = point_env(p)
            for i in range(self.d):
                for j in range(self.d):
                    H[:, i, j] = self.hess[i][j](**env)
            return H
        e = 1e-3
        f0 = self.value(p)
        for k in range(self.d):
            H[:, k, k] = (-self._shift(p, k, 2 * e) + 16 * self._shift(p, k, e) - 30 * f0
                          + 16 * self._shift(p, k, -e) - self._shift(p, k, -2 * e)) / (12 * e * e)
        if self.d == 2:
            def f(a, b):
                q = p.copy()
                q[:, 0] += a
                q[:, 1] += b
                return self.value(q)
            H[:, 0, 1] = H[:, 1, 0] = (f(e, e) - f(e, -e) - f(-e, e) + f(-e, -e)) / (4 * e * e)
        return H


def apply_operator(L, derivs, p):
    """L phi at the points, in the operator's own form."""
    A = L.A(p)
    H = derivs.hessian(p)
    G = derivs.gradient(p)
    out = np.einsum("nij,nij->n", A, H) + L.c(p) * derivs.value(p)
    if L.selfadjoint:
        e = 1e-5
        for i in range(L.dimension):
            q1, q2 = p.copy(), p.copy()
            q1[:, i] += e
            q2[:, i] -= e
            dA = (L.A(q1) - L.A(q2)) / (2 * e)
            out += np.einsum("nj,nj->n", dA[:, i, :], G)
    elif L.b is not None:
        out += np.sum(L.b(p) * G, axis=1)
    return out


def _sample(cert, h, d):
    box = np.asarray(cert.box, dtype=float).reshape(d, 2)
    axes = [np.linspace(lo, hi, int(round((hi - lo) / h)) + 1) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), box


def _evaluate_certificate(L, B, cert, derivs, domain, h):
    d = L.dimension
    pts, box = _sample(cert, h, d)
    inside = domain.sdf(pts) > 0
    pts = pts[inside]
    vals = apply_operator(L, derivs, pts) + cert.lam * derivs.value(pts)
    phi = derivs.value(pts)
    # boundary sample inside the box
    center = box.mean(axis=1)
    radius = float(np.linalg.norm(box[:, 1] - box[:, 0]) / 2 + h)
    bpts, nu = boundary_samples(domain, center, radius, h)
    if bpts.shape[0]:
        keep = np.all((bpts >= box[:, 0] - 1e-12) & (bpts <= box[:, 1] + 1e-12), axis=1)
        bpts, nu = bpts[keep], nu[keep]
    if bpts.shape[0]:
        if B.kind == "dirichlet":
            bvals = derivs.value(bpts)
        else:
            beta = B.beta_at(bpts, nu, L.A(bpts))
            bvals = np.sum(beta * derivs.gradient(bpts), axis=1) + B.gamma_at(bpts) * derivs.value(bpts)
        phi = np.concatenate([phi, derivs.value(bpts)])
    else:
        bvals = np.zeros(0)
    if cert.sense == "supersolution":
        wi = float(np.max(vals)) if vals.size else -math.inf
        wb = float(np.max(-bvals)) if bvals.size else -math.inf
    else:
        wi = float(np.max(-vals)) if vals.size else -math.inf
        wb = float(np.max(bvals)) if bvals.size else -math.inf
    return wi, wb, float(np.min(phi)), float(np.max(phi)), int(phi.size)


def verify_certificate(L, B, cert, tol=1e-8, refine=True):
    """Check the differential inequalities and side conditions of a test function on a sample box."""
    domain = make_domain(cert.domain) if cert.domain is not None else make_domain(
        {"shape": "whole_space", "dimension": L.dimension})
    derivs = _Derivs(cert.phi, L.dimension)
    wi, wb, lo, hi, n = _evaluate_certificate(L, B, cert, derivs, domain, cert.h)
    ineq_ok = wi <= tol and wb <= tol
    if refine:
        wi2, wb2, lo2, hi2, n2 = _evaluate_certificate(L, B, cert, derivs, domain, cert.h / 2)
        if (wi2 <= tol and wb2 <= tol) != ineq_ok:
            raise SampleTooCoarse(f"certificate {cert.name or cert.phi!r} changes verdict under refinement")
        wi, wb, lo, hi = max(wi, wi2), max(wb, wb2), min(lo, lo2), max(hi, hi2)
    classes_ok = lo > 0
    if "inf_positive" in cert.classes:
        classes_ok &= lo >= cert.margin
    if "bounded" in cert.classes:
        classes_ok &= math.isfinite(hi) and hi <= cert.bound
    passed = bool(ineq_ok and classes_ok)
    box = np.asarray(cert.box, dtype=float).reshape(L.dimension, 2).tolist()
    label = f"certified on {box} at h={cert.h}"
    bound = implied_bound(cert.sense, cert.classes, cert.lam) if passed else None
    return CertificateReport(passed, float(cert.lam), cert.sense, sorted(cert.classes), bound,
                             wi, wb, lo, hi, n, label, derivs.mode, cert.name)


# eigenfunctions below lambda_B --------------------------------------------

@dataclass
class EigenfunctionSequence:
    radii: list
    window_points: np.ndarray
    vectors: list
    cauchy: list
    positive: list
    converged: bool
    residual: float


def eigenfunction_below_lambda(domain, y, L, B, lam, r_schedule, h, window=None, tol=1e-3):
    """Solve (M - lam) u_n = g_n with g_n >= 0 supported in the outer shell, normalise u_n(y) = 1."""
    domain = make_domain(domain)
    radii = [float(r) for r in r_schedule]
    if window is None:
        window = 0.5 * (radii[0] - 1.0)
    vectors, positive, ref_lattice, window_pts = [], [], None, None
    last = None
    for r in radii:
        grid = truncate(domain, y, r, h)
        system = assemble(grid, L, B)
        dist = np.linalg.norm(system.points - grid.center, axis=1)
        shell = (dist > r - 1.0) & (dist < r)
        g = np.where(shell, np.sin(np.pi * (dist - (r - 1.0))) ** 2, 0.0)
        if not np.any(g > 0):
            raise ConfigError(f"shell source misses every unknown at r={r}")
        op = (system.matrix - lam * sps.identity(system.size)).tocsc()
        try:
            with np.errstate(all="ignore"):
                u = splu(op).solve(g)
        except RuntimeError as exc:
            raise ResolventSingular(f"M - lambda is singular at r={r}") from exc
        if not np.all(np.isfinite(u)) or np.max(np.abs(op @ u - g)) > 1e-6 * max(np.max(np.abs(u)), 1.0) * system.scale:
            raise ResolventSingular(f"M - lambda is numerically singular at r={r}")
        seed = int(np.flatnonzero(system.unknown == grid.seed)[0])
        positive.append(bool(np.min(u) >= -1e-12 * np.max(np.abs(u)) and u[seed] > 0))
        if u[seed] == 0:
            raise ResolventSingular("solution vanishes at the centre")
        u = u / u[seed]
        if ref_lattice is None:
            wsel = dist <= window
            ref_lattice = grid.lattice[system.unknown[wsel]]
            window_pts = system.points[wsel]
        gi = grid.index_of(ref_lattice)
        loc = np.full(grid.size, -1)
        loc[system.unknown] = np.arange(system.size)
        vectors.append(u[loc[gi]])
        last = (system, u, loc[gi])
    cauchy = [float(np.max(np.abs(b - a))) for a, b in zip(vectors, vectors[1:])]
    system, u, idx = last
    resid = (system.matrix @ u - lam * u)[idx]
    converged = bool(cauchy and cauchy[-1] < tol)
    return EigenfunctionSequence(radii, window_pts, vectors, cauchy, positive, converged,
                                 float(np.max(np.abs(resid))))


def average_bound_audit(sweep, averages, tol=0.1):
    """lambda_B estimate <= -<c> (+ tol), and Lambda_B estimate <= -least mean when both are present."""
    c_sweep = np.asarray(sweep.centers[0] if sweep.centers else [0.0], dtype=float)
    c_avg = np.asarray(averages.center, dtype=float)
    if c_sweep.shape != c_avg.shape or not np.allclose(c_sweep, c_avg):
        raise MismatchedScenario(f"sweep centre {c_sweep.tolist()} vs averages centre {c_avg.tolist()}")
    slack = sweep.lambdaB_estimate + averages.mean_estimate
    ok = slack <= tol
    out = {"mean_slack": float(slack), "mean_ok": bool(ok)}
    if sweep.LambdaB_estimate is not None and averages.least_mean_estimate is not None:
        s2 = sweep.LambdaB_estimate + averages.least_mean_estimate
        out["least_mean_slack"] = float(s2)
        out["least_mean_ok"] = bool(s2 <= tol)
        ok = ok and s2 <= tol
    return bool(ok), float(slack), out
