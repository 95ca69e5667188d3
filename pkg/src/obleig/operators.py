"""Elliptic and boundary operators and their discretisation on a truncated grid.

The assembled matrix M represents -L with the boundary condition folded in,
so the truncated mixed eigenproblem reads M v = lambda v.

Oblique kind: vertex-centred finite volumes on cut cells. Interior faces
carry two-point fluxes a*|F|/h, edges crossing the sphere carry a*|F|/(theta h)
towards the Dirichlet value, and the boundary piece Gamma_i of each cut cell
carries the conormal flux obtained from the oblique condition: writing
A nu = s beta + t with s = nu.A nu / beta.nu, the condition beta.grad u = -gamma u
turns nu.A grad u into -s gamma u + t.grad u.

Dirichlet kind: Shortley-Weller differences with the wall located by linear
interpolation of the signed distance.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

from .errors import (ConfigError, DimensionMismatch, EllipticityViolation, EmptyTruncation,
                     KTooSmall, ObliquenessViolation)
from .fields import matrix_field, scalar_field, vector_field
from .geometry import THETA_MIN, boundary_samples, make_domain


@dataclass
class EllipticOperator:
    dimension: int
    A: object
    b: object
    c: object
    form: str = "nondivergence"
    bounds: dict = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form not in ("nondivergence", "selfadjoint_divergence"):
            raise ConfigError(f"unknown operator form {self.form!r}")

    @property
    def selfadjoint(self):
        return self.form == "selfadjoint_divergence"

    def has_drift(self):
        return (not self.selfadjoint) and self.b is not None and not self.b.is_zero()

    def without_c(self):
        return EllipticOperator(self.dimension, self.A, self.b, scalar_field(0.0), self.form,
                                self.bounds, dict(self.config, c=0.0))

    def check(self, points):
        """Evaluate A on points and enforce symmetry, ellipticity and declared bounds."""
        Av = self.A(points)
        if not np.allclose(Av, np.swapaxes(Av, 1, 2), atol=1e-12):
            raise EllipticityViolation("A(x) is not symmetric")
        lam = np.linalg.eigvalsh(Av)
        if not np.all(lam[:, 0] > 0):
            bad = int(np.argmin(lam[:, 0]))
            raise EllipticityViolation(f"A not positive definite at {np.atleast_2d(points)[bad].tolist()}")
        if self.bounds:
            tol = 1e-12
            if "inf_A" in self.bounds and np.min(lam[:, 0]) < self.bounds["inf_A"] - tol:
                raise EllipticityViolation("ellipticity below the declared bound")
            if "sup_A" in self.bounds and np.max(lam[:, -1]) > self.bounds["sup_A"] + tol:
                raise EllipticityViolation("|A| above the declared bound")
        return Av, lam[:, 0]


def make_operator(cfg, dimension):
    """Build an EllipticOperator from a config block {A, b, c, form, bounds}."""
    if isinstance(cfg, EllipticOperator):
        return cfg
    cfg = dict(cfg or {})
    form = cfg.get("form", "nondivergence")
    A = matrix_field(cfg.get("A", 1.0), dimension)
    b = vector_field(cfg.get("b"), dimension)
    c = scalar_field(cfg.get("c", 0.0))
    return EllipticOperator(dimension, A, b, c, form, cfg.get("bounds"), cfg)


@dataclass
class ObliqueBoundary:
    kind: str
    beta: object  # "normal", "conormal" or a VectorField
    gamma: object
    bounds: dict = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("oblique", "dirichlet"):
            raise ConfigError(f"unknown boundary kind {self.kind!r}")

    def beta_at(self, points, normals, A_at=None):
        if isinstance(self.beta, str):
            if self.beta == "normal":
                return np.array(normals, dtype=float)
            if self.beta == "conormal":
                if A_at is None:
                    return np.array(normals, dtype=float)
                return np.einsum("nij,nj->ni", A_at, normals)
            raise ConfigError(f"unknown beta {self.beta!r}")
        return self.beta(points)

    def gamma_at(self, points):
        return self.gamma(points)


def make_boundary(cfg, dimension):
    """Boundary block: {"kind": neumann|robin|oblique|dirichlet, "beta", "gamma"}."""
    if isinstance(cfg, ObliqueBoundary):
        return cfg
    cfg = dict(cfg or {"kind": "neumann"})
    kind = cfg.get("kind", "neumann")
    if kind == "dirichlet":
        return ObliqueBoundary("dirichlet", "normal", scalar_field(0.0), cfg.get("bounds"), cfg)
    if kind not in ("neumann", "robin", "oblique"):
        raise ConfigError(f"unknown boundary kind {kind!r}")
    beta = cfg.get("beta", "normal")
    if not isinstance(beta, str):
        beta = vector_field(beta, dimension)
    gamma = scalar_field(0.0 if kind == "neumann" else cfg.get("gamma", 0.0))
    return ObliqueBoundary("oblique", beta, gamma, cfg.get("bounds"), cfg)


@dataclass
class DiscreteSystem:
    matrix: object               # csr, rows/cols over unknowns
    grid: object
    unknown: np.ndarray          # grid indices of the unknowns
    weights: np.ndarray          # lumped cell volumes of the unknowns
    symmetric: bool
    scale: float
    dirichlet_matrix: object     # csr, (unknowns x dirichlet points)
    dirichlet_points: np.ndarray
    dirichlet_tags: np.ndarray   # 0 cap, 1 wall
    operator: object = None
    boundary: object = None

    @property
    def size(self):
        return self.unknown.size

    @property
    def coords(self):
        return self.grid.node_coords[self.unknown]

    @property
    def points(self):
        return self.grid.points[self.unknown]

    def weighted(self):
        """W M; symmetric for self-adjoint assembly with conormal boundary rows."""
        return sps.diags(self.weights) @ self.matrix

    def symmetrized(self):
        """W^(1/2) M W^(-1/2), similar to M."""
        sq = np.sqrt(self.weights)
        return (sps.diags(sq) @ self.matrix @ sps.diags(1.0 / sq)).tocsr()

    def extend(self, v, fill=0.0):
        """Scatter an unknown vector onto all grid nodes."""
        out = np.full(self.grid.size, fill, dtype=float)
        out[self.unknown] = v
        return out

    def restrict(self, full):
        return np.asarray(full)[self.unknown]


def apply(system, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (system.size,):
        raise DimensionMismatch(f"vector of shape {v.shape} for a system of size {system.size}")
    return system.matrix @ v


def _slots(d):
    return [(k, s) for k in range(d) for s in (1, -1)]


class _Builder:
    def __init__(self, n):
        self.rows, self.cols, self.vals = [], [], []
        self.drows, self.dvals, self.dpts, self.dtags = [], [], [], []

    def add(self, r, c, v):
        self.rows.append(np.asarray(r))
        self.cols.append(np.asarray(c))
        self.vals.append(np.asarray(v, dtype=float))

    def dirichlet(self, r, pts, v, tag):
        r = np.asarray(r)
        if r.size == 0:
            return
        self.drows.append(r)
        self.dvals.append(np.asarray(v, dtype=float))
        self.dpts.append(np.asarray(pts, dtype=float))
        self.dtags.append(np.full(r.size, tag, dtype=np.int8))

    def matrix(self, n):
        if not self.rows:
            return sps.csr_matrix((n, n))
        r = np.concatenate([np.ravel(x) for x in self.rows])
        c = np.concatenate([np.ravel(x) for x in self.cols])
        v = np.concatenate([np.ravel(x) for x in self.vals])
        return sps.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()

    def dirichlet_parts(self, n, d):
        if not self.drows:
            return sps.csr_matrix((n, 0)), np.zeros((0, d)), np.zeros(0, dtype=np.int8)
        r = np.concatenate(self.drows)
        v = np.concatenate(self.dvals)
        pts = np.concatenate(self.dpts)
        tags = np.concatenate(self.dtags)
        m = r.size
        D = sps.coo_matrix((v, (r, np.arange(m))), shape=(n, m)).tocsr()
        return D, pts, tags


def assemble(grid, L, B):
    """Assemble M (the discrete -L with B folded in) on the grid unknowns."""
    d, h = grid.dimension, grid.spacing
    N = grid.size
    slots = _slots(d)
    nbr = grid.neighbors
    pts = grid.points

    if B.kind == "dirichlet":
        mask = grid.sdf > THETA_MIN * h
        if not mask[grid.seed]:
            raise EmptyTruncation("seed too close to the Dirichlet wall at this resolution")
        # keep the unknown component containing the seed
        ii = np.flatnonzero(mask)
        pos0 = np.full(N, -1)
        pos0[ii] = np.arange(ii.size)
        er, ec = [], []
        for slot in range(2 * d):
            j = nbr[ii, slot]
            ok = (j >= 0) & mask[np.maximum(j, 0)]
            er.append(pos0[ii[ok]])
            ec.append(pos0[j[ok]])
        er, ec = np.concatenate(er), np.concatenate(ec)
        adj = sps.coo_matrix((np.ones(er.size), (er, ec)), shape=(ii.size, ii.size))
        _, lab = connected_components(adj, directed=False)
        keep = lab == lab[pos0[grid.seed]]
        unknown = ii[keep]
    else:
        unknown = np.arange(N)
    n = unknown.size
    pos = np.full(N, -1)
    pos[unknown] = np.arange(n)
    is_unknown = pos >= 0

    Aall, under = L.check(pts)
    c_vals = L.c(pts)
    bld = _Builder(n)
    pointwise = _Builder(n)
    u = unknown

    if B.kind == "dirichlet":
        weights = np.full(n, h ** d)
        # distances to the Dirichlet data along each axis, in units of h
        dist = np.ones((n, 2 * d))
        target = np.full((n, 2 * d), -1)
        for slot, (k, sgn) in enumerate(slots):
            j = nbr[u, slot]
            inside = (j >= 0) & is_unknown[np.maximum(j, 0)]
            target[inside, slot] = pos[j[inside]]
            theta = np.full(n, np.inf)
            capt = grid.cap_theta[u, slot]
            has_cap = np.isfinite(capt)
            theta[has_cap] = capt[has_cap]
            wall = ~inside
            if np.any(wall):
                q = pts[u[wall]].copy()
                q[:, k] += sgn * h
                s_j = grid.domain.sdf(q)
                s_i = grid.sdf[u[wall]]
                crosses = (s_j < s_i) & (s_j <= THETA_MIN * h)
                with np.errstate(invalid="ignore", divide="ignore"):
                    tw = np.where(crosses, s_i / (s_i - s_j), np.inf)
                tw = np.where(np.isnan(tw), np.inf, tw)
                theta[wall] = np.minimum(theta[wall], np.clip(tw, THETA_MIN / 2, np.inf))
            theta[np.isinf(theta)] = 1.0
            dist[~inside, slot] = theta[~inside]
            dist[inside, slot] = 1.0
        for k in range(d):
            sp_, sm_ = 2 * k, 2 * k + 1
            hp, hm = dist[:, sp_] * h, dist[:, sm_] * h
            for slot, hs in ((sp_, hp), (sm_, hm)):
                j = nbr[u, slot]
                if L.selfadjoint:
                    a = Aall[u, k, k].copy()
                    inside = target[:, slot] >= 0
                    a[inside] = 0.5 * (Aall[u[inside], k, k] + Aall[j[inside], k, k])
                else:
                    a = Aall[u, k, k]
                coef = 2.0 * a / (hs * (hp + hm))
                rows = np.arange(n)
                bld.add(rows, rows, coef)
                inside = target[:, slot] >= 0
                bld.add(rows[inside], target[inside, slot], -coef[inside])
                out = ~inside
                sgn = slots[slot][1]
                cp = pts[u[out]].copy()
                cp[:, k] += sgn * hs[out]
                tags = np.where(np.isfinite(grid.cap_theta[u[out], slot])
                                & np.isclose(dist[out, slot], grid.cap_theta[u[out], slot]), 0, 1)
                for tag in (0, 1):
                    sel = tags == tag
                    bld.dirichlet(rows[out][sel], cp[sel], coef[out][sel], tag)
        flux = bld.matrix(n)
        Dmat, dpts, dtags = bld.dirichlet_parts(n, d)
        gradient_side = dist
    else:
        weights = grid.volumes.copy()
        if np.any(weights <= 0):
            raise EmptyTruncation("cell with zero volume in the truncation")
        for slot, (k, sgn) in enumerate(slots):
            j = nbr[:, slot]
            face = grid.face_fraction[:, slot] * h ** (d - 1)
            capt = grid.cap_theta[:, slot]
            cap = np.isfinite(capt)
            inner = (~cap) & (j >= 0)
            rows = np.arange(N)
            if L.selfadjoint:
                a = Aall[:, k, k].copy()
                a[inner] = 0.5 * (Aall[inner, k, k] + Aall[j[inner], k, k])
            else:
                a = Aall[:, k, k]
            T = a * face / h
            bld.add(rows[inner], rows[inner], T[inner])
            bld.add(rows[inner], j[inner], -T[inner])
            Tc = a[cap] * face[cap] / (capt[cap] * h)
            bld.add(rows[cap], rows[cap], Tc)
            cp = pts[cap].copy()
            cp[:, k] += sgn * capt[cap] * h
            bld.dirichlet(rows[cap], cp, Tc, 0)
        # oblique boundary pieces
        bidx = np.flatnonzero(grid.boundary_measure > 0)
        if bidx.size:
            xb = grid.node_coords[bidx]
            nu = grid.normals[bidx]
            Ab = L.A(xb)
            beta = B.beta_at(xb, nu, Ab)
            bn = np.sum(beta * nu, axis=1)
            if np.any(~(bn > 0)):
                bad = int(np.argmin(np.where(np.isfinite(bn), bn, -np.inf)))
                raise ObliquenessViolation(f"beta.nu = {bn[bad]:.3g} <= 0 at {xb[bad].tolist()}")
            gam = B.gamma_at(xb)
            Anu = np.einsum("nij,nj->ni", Ab, nu)
            sfac = np.sum(nu * Anu, axis=1) / bn
            tvec = Anu - sfac[:, None] * beta
            meas = grid.boundary_measure[bidx]
            bld.add(bidx, bidx, meas * sfac * gam)
            tang = np.linalg.norm(tvec, axis=1) > 1e-13
            if np.any(tang):
                gr, gc, gv = _gradient_stencil(grid, bidx[tang], is_unknown, pos)
                # row -= |Gamma| t . grad u
                tv = tvec[tang]
                mm = meas[tang]
                for k in range(d):
                    rows_k, cols_k, vals_k = gr[k], gc[k], gv[k]
                    bld.add(bidx[tang][rows_k], cols_k, -(mm * tv[:, k])[rows_k] * vals_k)
        flux = sps.diags(1.0 / weights) @ bld.matrix(n)
        Dmat, dpts, dtags = bld.dirichlet_parts(n, d)
        Dmat = sps.diags(1.0 / weights) @ Dmat
        gradient_side = None

    # drift: central when the mesh Peclet number is at most 2, upwind otherwise
    if L.has_drift():
        bvals = L.b(pts[u])
        drift = _Builder(n)
        for k in range(d):
            bk = bvals[:, k]
            pe = np.abs(bk) * h / under[u]
            sides = []
            for slot in (2 * k, 2 * k + 1):
                j = nbr[u, slot]
                inside = (j >= 0) & is_unknown[np.maximum(j, 0)]
                if B.kind == "dirichlet":
                    dd = gradient_side[:, slot]
                    has_g = ~inside
                else:
                    capt = grid.cap_theta[u, slot]
                    has_g = np.isfinite(capt)
                    dd = np.where(has_g, capt, 1.0)
                    inside = inside & ~has_g
                capt = grid.cap_theta[u, slot]
                tag = np.where(np.isfinite(capt) & np.isclose(dd, capt), 0, 1)
                sides.append((inside, has_g, dd * h, np.where(inside, pos[np.maximum(j, 0)], -1), tag))
            (ip, gp, dp, jp, tp), (im, gm, dm, jm, tm) = sides
            rows = np.arange(n)
            central = (pe <= 2) & ip & im
            c = central
            drift.add(rows[c], jp[c], -bk[c] / (2 * h))
            drift.add(rows[c], jm[c], bk[c] / (2 * h))
            rest = ~central
            # choose the upwind side, falling back to the available one
            use_plus = rest & (((bk > 0) & (ip | gp)) | ((bk <= 0) & ~(im | gm) & (ip | gp)))
            use_minus = rest & ~use_plus & (im | gm)
            # + side: -b (v_+ - u_i)/d_+
            sel = use_plus & ip
            drift.add(rows[sel], rows[sel], bk[sel] / dp[sel])
            drift.add(rows[sel], jp[sel], -bk[sel] / dp[sel])
            sel = use_plus & gp
            drift.add(rows[sel], rows[sel], bk[sel] / dp[sel])
            _drift_dirichlet(drift, rows[sel], pts[u[sel]], k, 1, dp[sel], bk[sel] / dp[sel], tp[sel])
            # - side: -b (u_i - v_-)/d_-
            sel = use_minus & im
            drift.add(rows[sel], rows[sel], -bk[sel] / dm[sel])
            drift.add(rows[sel], jm[sel], bk[sel] / dm[sel])
            sel = use_minus & gm
            drift.add(rows[sel], rows[sel], -bk[sel] / dm[sel])
            _drift_dirichlet(drift, rows[sel], pts[u[sel]], k, -1, dm[sel], -bk[sel] / dm[sel], tm[sel])
        flux = flux + drift.matrix(n)
        Dd, dptsd, dtagsd = drift.dirichlet_parts(n, d)
        if Dd.shape[1]:
            Dmat = sps.hstack([Dmat, Dd]).tocsr()
            dpts = np.concatenate([dpts, dptsd])
            dtags = np.concatenate([dtags, dtagsd])

    # mixed derivatives by the 4-point stencil where all diagonal nodes are unknowns
    if d == 2 and L.A.has_cross_terms():
        a12 = Aall[u, 0, 1]
        jpp = _diag(nbr, u, 0, 2)
        jpm = _diag(nbr, u, 0, 3)
        jmp = _diag(nbr, u, 1, 2)
        jmm = _diag(nbr, u, 1, 3)
        ok = (jpp >= 0) & (jpm >= 0) & (jmp >= 0) & (jmm >= 0) & (a12 != 0)
        ok &= is_unknown[np.maximum(jpp, 0)] & is_unknown[np.maximum(jpm, 0)]
        ok &= is_unknown[np.maximum(jmp, 0)] & is_unknown[np.maximum(jmm, 0)]
        rows = np.flatnonzero(ok)
        coef = -2.0 * a12[ok] / (4 * h * h)
        pointwise.add(rows, pos[jpp[ok]], coef)
        pointwise.add(rows, pos[jpm[ok]], -coef)
        pointwise.add(rows, pos[jmp[ok]], -coef)
        pointwise.add(rows, pos[jmm[ok]], coef)

    rows = np.arange(n)
    pointwise.add(rows, rows, -c_vals[u])
    M = (flux + pointwise.matrix(n)).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    scale = float(np.max(np.abs(M).sum(axis=1))) if n else 0.0
    WM = sps.diags(weights) @ M
    asym = abs(WM - WM.T).max() if n else 0.0
    symmetric = bool(asym <= 1e-12 * max(scale, 1e-300) * float(np.max(weights)))
    return DiscreteSystem(M, grid, unknown, weights, symmetric, scale, Dmat.tocsr(), dpts, dtags, L, B)


def _diag(nbr, u, s1, s2):
    j = nbr[u, s1]
    out = np.full(u.size, -1)
    ok = j >= 0
    out[ok] = nbr[j[ok], s2]
    return out


def _drift_dirichlet(bld, rows, p, k, sgn, dist, coef, tags):
    if rows.size == 0:
        return
    cp = p.copy()
    cp[:, k] += sgn * dist
    for tag in (0, 1):
        sel = tags == tag
        bld.dirichlet(rows[sel], cp[sel], coef[sel], tag)


def _gradient_stencil(grid, nodes, is_unknown, pos):
    """Per-axis lattice gradient at the given nodes (central where possible, else one-sided)."""
    d, h = grid.dimension, grid.spacing
    nbr = grid.neighbors
    out_r, out_c, out_v = [], [], []
    m = nodes.size
    for k in range(d):
        jp, jm = nbr[nodes, 2 * k], nbr[nodes, 2 * k + 1]
        okp = (jp >= 0) & is_unknown[np.maximum(jp, 0)]
        okm = (jm >= 0) & is_unknown[np.maximum(jm, 0)]
        r, c, v = [], [], []
        idx = np.arange(m)
        both = okp & okm
        r += [idx[both], idx[both]]
        c += [pos[jp[both]], pos[jm[both]]]
        v += [np.full(both.sum(), 0.5 / h), np.full(both.sum(), -0.5 / h)]
        onlyp = okp & ~okm
        r += [idx[onlyp], idx[onlyp]]
        c += [pos[jp[onlyp]], pos[nodes[onlyp]]]
        v += [np.full(onlyp.sum(), 1 / h), np.full(onlyp.sum(), -1 / h)]
        onlym = okm & ~okp
        r += [idx[onlym], idx[onlym]]
        c += [pos[nodes[onlym]], pos[jm[onlym]]]
        v += [np.full(onlym.sum(), 1 / h), np.full(onlym.sum(), -1 / h)]
        out_r.append(np.concatenate(r))
        out_c.append(np.concatenate(c))
        out_v.append(np.concatenate(v))
    return out_r, out_c, out_v


# barrier -----------------------------------------------------------------

def chi_reference(t):
    """Reference profile (1 - t)(1 - t^2)^3 on [-1, 1], zero outside.

    Smooth (C^2), nonnegative, supported in [-1, 1], chi(0) = 1, chi'(0) = -1.
    """
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1, (1 - t) * (1 - t * t) ** 3, 0.0)


def chi_reference_prime(t):
    t = np.asarray(t, dtype=float)
    q = 1 - t * t
    return np.where(np.abs(t) <= 1, -q ** 2 * (q + 6 * t * (1 - t)), 0.0)


@dataclass
class Barrier:
    k: float
    chi: object
    boundary_min: float
    inf_value: float
    domain: object = field(repr=False)

    def __call__(self, points):
        return 1.0 + self.chi(self.k * self.domain.sdf(points))


def build_barrier(domain, B, k, center=None, radius=5.0, h=0.05, chi=chi_reference):
    """Barrier 1 + chi(k d(x)) with a positive oblique derivative on the boundary sample."""
    domain = make_domain(domain)
    rho = domain.interior_ball_radius
    if rho is not None and math.isfinite(rho) and not k > 1.0 / rho:
        raise KTooSmall(f"k = {k} does not exceed 1/rho = {1.0 / rho}")
    d = domain.dimension
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    field_ = lambda p: 1.0 + chi(k * domain.sdf(p))
    pts, nu = boundary_samples(domain, center, radius, h)
    if pts.shape[0] == 0:
        bmin = math.inf
    else:
        step = 1e-6
        grad = np.zeros_like(pts)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            grad[:, j] = (field_(pts + e) - field_(pts - e)) / (2 * step)
        beta = B.beta_at(pts, nu)
        vals = np.sum(beta * grad, axis=1) + B.gamma_at(pts) * field_(pts)
        bmin = float(np.min(vals))
        if not bmin > 0:
            raise KTooSmall(f"B w = {bmin:.4g} <= 0 on the boundary sample")
    K = int(math.ceil(radius / h))
    ax = np.arange(-K, K + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    q = center + h * np.stack([m.ravel() for m in mesh], axis=1)
    q = q[domain.sdf(q) > 0]
    inf_val = float(np.min(field_(q))) if q.size else 1.0
    return Barrier(k, chi, bmin, inf_val, domain)
