"""Implicit domains, truncations Omega_r(y) and the geometric audits.

Domains are signed-distance compositions (positive inside). A truncation
is the lattice y + h Z^d restricted to the connected component of
Omega cap B_r(y) containing y, together with the cut-cell data (cell
volumes, open face fractions, boundary measure and normal) that the
finite-volume assembly needs.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .errors import ConfigError, EmptyTruncation, InvalidMass, SeedOutsideDomain

UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}

# nodes closer than THETA_MIN*h to the cap are folded into the cap so that
# no cut edge is shorter than THETA_MIN*h
THETA_MIN = 0.2


@dataclass(frozen=True)
class DomainSpec:
    dimension: int
    sdf_func: object = field(repr=False, compare=False)
    interior_ball_radius: object = None  # float, math.inf, or None for unknown
    unbounded: bool = True
    config: dict = field(default_factory=dict, compare=False)

    def sdf(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            raise ConfigError(f"points of dimension {pts.shape[1]} for a {self.dimension}-d domain")
        return np.asarray(self.sdf_func(pts), dtype=float)

    def contains(self, points):
        return self.sdf(points) > 0

    def gradient(self, points, step=1e-6):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g = np.zeros_like(pts)
        for k in range(self.dimension):
            e = np.zeros(self.dimension)
            e[k] = step
            g[:, k] = (self.sdf(pts + e) - self.sdf(pts - e)) / (2 * step)
        return g

    def normal(self, points):
        """Outward unit normal -grad(sdf)/|grad(sdf)|."""
        g = self.gradient(points)
        n = np.linalg.norm(g, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return -g / n

    def project(self, points, iterations=3):
        """Move points onto the zero level set along the sdf gradient."""
        p = np.atleast_2d(np.asarray(points, dtype=float)).copy()
        for _ in range(iterations):
            s = self.sdf(p)
            g = self.gradient(p)
            gg = np.sum(g * g, axis=1)
            ok = np.isfinite(s) & (gg > 1e-12)
            p[ok] -= (s[ok] / gg[ok])[:, None] * g[ok]
        return p

    @property
    def rho(self):
        return self.interior_ball_radius

    def to_json(self):
        return dict(self.config)


def signed_distance(domain, x):
    """Signed distance of a single point, positive inside."""
    domain = make_domain(domain)
    return float(domain.sdf(np.atleast_2d(np.asarray(x, dtype=float)))[0])


# shape builders ---------------------------------------------------------

def _vec(v, d):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.size != d:
        raise ConfigError(f"expected a {d}-vector, got {v!r}")
    return a


def _shape(cfg, d):
    """Return (sdf, rho, unbounded) for a config block."""
    shape = cfg.get("shape")
    if shape == "whole_space":
        return (lambda p: np.full(p.shape[0], np.inf)), math.inf, True
    if shape == "half_plane":
        n = _vec(cfg.get("normal", [0.0] * (d - 1) + [1.0]), d)
        n = n / np.linalg.norm(n)
        off = float(cfg.get("offset", 0.0))
        return (lambda p: p @ n - off), math.inf, True
    if shape in ("strip", "interval"):
        axis = int(cfg.get("axis", d - 1 if shape == "strip" else 0))
        lo, hi = float(cfg.get("lo", -1.0)), float(cfg.get("hi", 1.0))
        if not hi > lo:
            raise ConfigError("strip needs hi > lo")
        return (lambda p: np.minimum(p[:, axis] - lo, hi - p[:, axis])), 0.5 * (hi - lo), d > 1
    if shape == "box":
        lo, hi = _vec(cfg["lo"], d), _vec(cfg["hi"], d)
        return (lambda p: np.min(np.minimum(p - lo, hi - p), axis=1)), None, False
    if shape == "ball":
        c, rad = _vec(cfg.get("center", [0.0] * d), d), float(cfg.get("radius", 1.0))
        return (lambda p: rad - np.linalg.norm(p - c, axis=1)), rad, False
    if shape == "ball_complement":
        c, rad = _vec(cfg.get("center", [0.0] * d), d), float(cfg.get("radius", 1.0))
        return (lambda p: np.linalg.norm(p - c, axis=1) - rad), math.inf, True
    if shape == "annulus":
        c = _vec(cfg.get("center", [0.0] * d), d)
        a, b = float(cfg["inner"]), float(cfg["outer"])

        def ann(p):
            q = np.linalg.norm(p - c, axis=1)
            return np.minimum(q - a, b - q)

        return ann, 0.5 * (b - a), False
    if shape == "annuli_union":
        if d != 2:
            raise ConfigError("annuli_union is two-dimensional")
        n_max = int(cfg.get("n_max", 4))
        w = float(cfg.get("connector_half_width", 0.5))
        radii = [(2.0 ** n, 2.0 ** n + 1.0) for n in range(1, n_max + 1)]

        def union(p):
            q = np.linalg.norm(p, axis=1)
            out = w - np.abs(p[:, 1])
            for a, b in radii:
                out = np.maximum(out, np.minimum(q - a, b - q))
            return out

        return union, min(0.5, w), True
    if shape == "cusp":
        a = float(cfg.get("a", 0.1))

        def cusp(p):
            g = (a * p[:, 0] ** 2 - np.abs(p[:, 1])) / np.sqrt(1.0 + (2 * a * p[:, 0]) ** 2)
            return np.minimum(p[:, 0], g)

        return cusp, None, True
    if shape in ("custom_union", "intersection"):
        parts = [_shape(dict(pc), d) for pc in cfg["parts"]]
        if not parts:
            raise ConfigError(f"{shape} needs parts")
        op = np.maximum if shape == "custom_union" else np.minimum

        def comp(p):
            out = parts[0][0](p)
            for f, _, _ in parts[1:]:
                out = op(out, f(p))
            return out

        unb = any(u for _, _, u in parts) if shape == "custom_union" else all(u for _, _, u in parts)
        return comp, None, unb
    if shape == "complement":
        f, _, _ = _shape(dict(cfg["part"]), d)
        return (lambda p: -f(p)), None, True
    raise ConfigError(f"unknown shape {shape!r}")


def make_domain(cfg):
    """Build a DomainSpec from a JSON-style config block."""
    if isinstance(cfg, DomainSpec):
        return cfg
    if not isinstance(cfg, dict) or "shape" not in cfg:
        raise ConfigError(f"domain config needs a shape: {cfg!r}")
    default_d = 1 if cfg["shape"] == "interval" else 2
    d = int(cfg.get("dimension", default_d))
    if d not in (1, 2):
        raise ConfigError("dimension must be 1 or 2")
    sdf, rho, unbounded = _shape(cfg, d)
    if "interior_ball_radius" in cfg:
        val = cfg["interior_ball_radius"]
        rho = None if val in (None, "unknown") else (math.inf if val == "inf" else float(val))
    if "unbounded" in cfg:
        unbounded = bool(cfg["unbounded"])
    full = dict(cfg)
    full["dimension"] = d
    return DomainSpec(d, sdf, rho, unbounded, full)


# truncation -------------------------------------------------------------

@dataclass
class TruncatedGrid:
    domain: DomainSpec
    center: np.ndarray
    radius: float
    spacing: float
    lattice: np.ndarray          # (N, d) integer offsets
    points: np.ndarray           # (N, d) lattice positions y + h k
    sdf: np.ndarray              # (N,)
    kind: np.ndarray             # 0 interior, 1 oblique
    node_coords: np.ndarray      # lattice position, or projection onto the boundary
    neighbors: np.ndarray        # (N, 2d) index of the active neighbour or -1
    cap_theta: np.ndarray        # (N, 2d) distance to the sphere in units of h, nan if none
    volumes: np.ndarray          # |C_i cap Omega cap B_r|
    face_fraction: np.ndarray    # (N, 2d) |F cap Omega| / h^(d-1)
    boundary_measure: np.ndarray  # |Gamma_i| from the divergence theorem
    normals: np.ndarray          # (N, d) outward unit normal where boundary_measure > 0
    cap_nodes: np.ndarray        # (Nc, d) lattice points just outside the ball
    seed: int

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def interior_nodes(self):
        return np.flatnonzero(self.kind == 0)

    @property
    def oblique_nodes(self):
        return np.flatnonzero(self.kind == 1)

    @property
    def distance(self):
        return np.linalg.norm(self.points - self.center, axis=1)

    def lattice_keys(self):
        return set(map(tuple, self.lattice.tolist()))

    def index_of(self, lattice):
        """Indices of the given lattice offsets in this grid, -1 when absent."""
        table = {k: i for i, k in enumerate(map(tuple, self.lattice.tolist()))}
        return np.array([table.get(tuple(k), -1) for k in np.atleast_2d(lattice).tolist()], dtype=int)

    def directions(self):
        """Unit step (k, sign) for each neighbour slot."""
        return [(k, s) for k in range(self.dimension) for s in (1, -1)]

    def mass(self, f=None, outside=None):
        """Midpoint-rule integral of f over nodes with sdf > 0 (cell counted if its centre is inside).

        outside restricts to nodes with |x - y| >= outside.
        """
        sel = self.sdf > 0
        if outside is not None:
            sel &= self.distance >= outside
        vals = np.ones(int(sel.sum())) if f is None else np.asarray(f(self.points[sel]), dtype=float)
        return float(np.sum(vals)) * self.spacing ** self.dimension


def _sub_offsets(n_sub, dim):
    t = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    mesh = np.meshgrid(*([t] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def truncate(domain, y, r, h, n_sub=None):
    """Discretise the connected component of Omega cap B_r(y) containing y."""
    domain = make_domain(domain)
    d = domain.dimension
    y = _vec(y, d)
    r, h = float(r), float(h)
    if not 0 < h <= r / 4:
        raise ConfigError(f"need 0 < h <= r/4 (h={h}, r={r})")
    rho = domain.interior_ball_radius
    if rho is not None and math.isfinite(rho) and not h <= rho / 2:
        raise ConfigError(f"need h <= rho/2 (h={h}, rho={rho})")
    if signed_distance(domain, y) <= 0:
        raise SeedOutsideDomain(f"sdf(y) <= 0 at y={y.tolist()}")
    if n_sub is None:
        n_sub = 64 if d == 1 else 8

    K = int(math.ceil(r / h)) + 1
    ax = np.arange(-K, K + 1)
    shape = (2 * K + 1,) * d
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    lat_all = np.stack([m.ravel() for m in mesh], axis=1)
    pts_all = y + h * lat_all
    dist_all = np.linalg.norm(pts_all - y, axis=1)
    in_ball = dist_all < r - THETA_MIN * h
    s_all = np.full(pts_all.shape[0], -np.inf)
    s_all[in_ball] = domain.sdf(pts_all[in_ball])
    active = in_ball & (s_all > -0.5 * h)

    structure = ndimage.generate_binary_structure(d, 1)
    labels, _ = ndimage.label(active.reshape(shape), structure=structure)
    seed_flat = np.ravel_multi_index((K,) * d, shape)
    lab = labels.ravel()[seed_flat]
    comp = np.flatnonzero(labels.ravel() == lab)
    sdf = s_all[comp]
    if not np.any(sdf > 0.5 * h):
        raise EmptyTruncation(f"no interior node in Omega_{r}(y) at h={h}")

    N = comp.size
    flat_to_node = np.full(pts_all.shape[0], -1, dtype=int)
    flat_to_node[comp] = np.arange(N)
    lattice = lat_all[comp]
    points = pts_all[comp]
    w = points - y

    strides = np.array([np.prod(shape[k + 1:], dtype=int) for k in range(d)])
    neighbors = np.full((N, 2 * d), -1, dtype=int)
    cap_theta = np.full((N, 2 * d), np.nan)
    cap_flat = []
    for slot, (k, sgn) in enumerate([(k, s) for k in range(d) for s in (1, -1)]):
        nb = comp + sgn * strides[k]
        neighbors[:, slot] = flat_to_node[nb]
        outside = ~in_ball[nb]
        if np.any(outside):
            wk = w[outside, k]
            rest = np.sum(w[outside] ** 2, axis=1) - wk ** 2
            t = -sgn * wk + np.sqrt(np.maximum(r * r - rest, 0.0))
            cap_theta[outside, slot] = t / h
            cap_flat.append(nb[outside])
    if cap_flat:
        cf = np.unique(np.concatenate(cap_flat))
        s_cap = domain.sdf(pts_all[cf])
        cap_nodes = pts_all[cf[s_cap > -0.5 * h]]
    else:
        cap_nodes = np.zeros((0, d))

    kind = np.where(sdf > 0.5 * h, 0, 1).astype(np.int8)

    # cut-cell quantities by sub-sampling the cells that touch a boundary
    half_diag = 0.5 * h * math.sqrt(d) * 1.0001
    near_wall = sdf < half_diag
    near_cap = np.linalg.norm(w, axis=1) > r - half_diag
    volumes = np.full(N, h ** d)
    face_fraction = np.ones((N, 2 * d))
    idx = np.flatnonzero(near_wall | near_cap)
    if idx.size:
        offs = _sub_offsets(n_sub, d) * h
        q = (points[idx][:, None, :] + offs[None, :, :]).reshape(-1, d)
        inside = (domain.sdf(q) > 0) & (np.linalg.norm(q - y, axis=1) < r)
        volumes[idx] = inside.reshape(idx.size, -1).mean(axis=1) * h ** d
        # cells whose sub-samples all miss the domain keep half a sub-cell of volume
        volumes[idx] = np.maximum(volumes[idx], 0.5 * h ** d / offs.shape[0])
    widx = np.flatnonzero(near_wall)
    if widx.size:
        face_offs = _sub_offsets(n_sub, d - 1) * h if d > 1 else np.zeros((1, 0))
        for slot, (k, sgn) in enumerate([(k, s) for k in range(d) for s in (1, -1)]):
            others = [j for j in range(d) if j != k]
            offs = np.zeros((face_offs.shape[0], d))
            offs[:, k] = 0.5 * sgn * h
            for col, j in enumerate(others):
                offs[:, j] = face_offs[:, col]
            q = (points[widx][:, None, :] + offs[None, :, :]).reshape(-1, d)
            face_fraction[widx, slot] = (domain.sdf(q) > 0).reshape(widx.size, -1).mean(axis=1)

    bvec = np.zeros((N, d))
    for slot, (k, sgn) in enumerate([(k, s) for k in range(d) for s in (1, -1)]):
        bvec[:, k] -= sgn * face_fraction[:, slot]
    bvec *= h ** (d - 1)
    boundary_measure = np.linalg.norm(bvec, axis=1)
    boundary_measure[boundary_measure < 1e-12 * h ** (d - 1)] = 0.0

    node_coords = points.copy()
    normals = np.zeros((N, d))
    bidx = np.flatnonzero((kind == 1) | (boundary_measure > 0))
    if bidx.size:
        proj = domain.project(points[bidx])
        nrm = domain.normal(proj)
        bad = ~np.all(np.isfinite(nrm), axis=1)
        if np.any(bad):
            bb = bvec[bidx[bad]]
            ln = np.linalg.norm(bb, axis=1, keepdims=True)
            nrm[bad] = np.where(ln > 0, bb / np.where(ln > 0, ln, 1.0), 0.0)
        normals[bidx] = nrm
        obl = kind[bidx] == 1
        node_coords[bidx[obl]] = proj[obl]

    seed = int(flat_to_node[seed_flat])
    return TruncatedGrid(domain, y, r, h, lattice, points, sdf, kind, node_coords, neighbors,
                         cap_theta, volumes, face_fraction, boundary_measure, normals,
                         cap_nodes, seed)


# diagnostics -------------------------------------------------------------

def transversality_check(domain, y, r, tol=1e-3, n_samples=4096):
    """Worst alignment |nu . e_r| over the crossings of the boundary with the sphere.

    Returns (ok, alignment); alignment is -1 when the sphere misses the boundary.
    """
    domain = make_domain(domain)
    d = domain.dimension
    y = _vec(y, d)
    if d == 1:
        pts = np.array([[y[0] - r], [y[0] + r]])
        s = domain.sdf(pts)
        hits = np.abs(s) <= 1e-9 * max(1.0, r)
        if not np.any(hits):
            return True, -1.0
        return False, 1.0

    def on_circle(theta):
        theta = np.atleast_1d(theta)
        return y + r * np.stack([np.cos(theta), np.sin(theta)], axis=1)

    def sdf_at(theta):
        return domain.sdf(on_circle(theta))

    th = np.linspace(0.0, 2 * np.pi, n_samples, endpoint=False)
    s = sdf_at(th)
    if not np.any(np.isfinite(s)):
        return True, -1.0
    crossings = []
    step = th[1] - th[0]
    for i in range(n_samples):
        a, b = th[i], th[i] + step
        sa, sb = s[i], s[(i + 1) % n_samples]
        if sa == 0.0:
            crossings.append(a)
        elif sa * sb < 0:
            for _ in range(60):
                m = 0.5 * (a + b)
                sm = sdf_at(m)[0]
                if sm * sa > 0:
                    a, sa = m, sm
                else:
                    b = m
            crossings.append(0.5 * (a + b))
    # tangential contacts: local minima of |sdf| that reach zero without a sign change
    abs_s = np.abs(s)
    for i in range(n_samples):
        if abs_s[i] <= abs_s[i - 1] and abs_s[i] <= abs_s[(i + 1) % n_samples] and abs_s[i] < 0.05 * r:
            res = minimize_scalar(lambda t: abs(sdf_at(t)[0]), bounds=(th[i] - step, th[i] + step),
                                  method="bounded", options={"xatol": 1e-12})
            if res.fun < 1e-7 * max(1.0, r):
                crossings.append(float(res.x))
    if not crossings:
        return True, -1.0
    pts = on_circle(np.array(crossings))
    nu = domain.normal(pts)
    er = (pts - y) / r
    align = np.abs(np.sum(nu * er, axis=1))
    align = align[np.isfinite(align)]
    if align.size == 0:
        return True, -1.0
    worst = float(np.max(align))
    return worst <= 1.0 - tol, worst


def growth_ratio_bound(n, omega1_mass, f_sup, d):
    """Upper bound on min_m |Omega_{m+1} minus B_m|_f / |Omega_m|_f over m = 1..n."""
    if not omega1_mass > 0:
        raise InvalidMass(f"|Omega_1|_f must be positive, got {omega1_mass}")
    if n < 1 or not f_sup > 0:
        raise ConfigError("need n >= 1 and f_sup > 0")
    base = UNIT_BALL_VOLUME[d] / omega1_mass * f_sup * n * (n + 1) ** d + 1.0
    return base ** (1.0 / n) - 1.0


@dataclass
class GrowthAudit:
    ratios: list
    omega1_mass: float
    f_sup: float
    bound: float
    slack: float

    @property
    def ok(self):
        return min(self.ratios) < self.bound + self.slack


def measured_growth_ratios(domain, y, f_density, n, h):
    """Ratios |Omega_{m+1} minus B_m|_f / |Omega_m|_f for m = 1..n by midpoint quadrature."""
    domain = make_domain(domain)
    f = f_density if callable(f_density) else (lambda p: np.full(len(p), float(f_density)))
    grids = [truncate(domain, y, m, h) for m in range(1, n + 2)]
    masses = [g.mass(f) for g in grids]
    if masses[0] <= 0:
        raise EmptyTruncation("|Omega_1|_f vanishes at this resolution")
    ratios = []
    for m in range(1, n + 1):
        outer = grids[m].mass(f, outside=m)
        ratios.append(outer / masses[m - 1])
    f_sup = float(np.max(f(grids[n].points[grids[n].sdf > 0])))
    bound = growth_ratio_bound(n, masses[0], max(f_sup, 1e-300), domain.dimension)
    return GrowthAudit(ratios, masses[0], f_sup, bound, 10 * h)


def interior_ball_bounds(domain, y, rho, h, radii=(2.0, 4.0, 8.0), tol=None):
    """Check the two volume lower bounds implied by an interior ball radius rho."""
    domain = make_domain(domain)
    d = domain.dimension
    vb = UNIT_BALL_VOLUME[d]
    if tol is None:
        tol = 2.0 * d * vb * h
    omega1 = truncate(domain, y, 1.0, h).mass()
    need1 = vb * min(rho, 0.5) ** d
    shells = []
    for r in radii:
        g = truncate(domain, y, r + 1.0, h)
        shells.append(g.mass(outside=r))
    need2 = vb * min(rho, 0.25) ** d
    return {
        "omega1": omega1,
        "omega1_required": need1,
        "omega1_ok": bool(omega1 >= need1 - tol),
        "annulus_masses": shells,
        "annulus_required": need2,
        "annulus_ok": bool(all(m >= need2 - tol for m in shells)),
        "tolerance": tol,
    }


@dataclass
class CoveringReport:
    radius: float
    bounding_radius: float
    cover_points: np.ndarray
    cardinality: int
    lattice_bound: int
    assignment: np.ndarray
    lattice_size_used: int

    def covers(self, samples):
        samples = np.atleast_2d(samples)
        dmin = cKDTree(self.cover_points).query(samples)[0]
        return bool(np.all(dmin < self.radius))


def internal_covering(samples, r, R, y=None):
    """Cover a sample set by balls B_r centred at sample points, one per populated lattice half-ball."""
    E = np.atleast_2d(np.asarray(samples, dtype=float))
    if not 0 < r < R:
        raise ConfigError("need 0 < r < R")
    if E.shape[0] == 0:
        raise ConfigError("empty sample set")
    d = E.shape[1]
    y = np.zeros(d) if y is None else _vec(y, d)
    a = r / (2.0 * math.sqrt(d))
    K = int(math.floor(R / a))
    ax = np.arange(-K, K + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    Z = y + a * np.stack([m.ravel() for m in mesh], axis=1)
    Z = Z[np.linalg.norm(Z - y, axis=1) <= R]
    dist, zi = cKDTree(Z).query(E)
    assignment = np.where(dist < r / 2, zi, -1)
    cover = []
    owner = np.full(E.shape[0], -1, dtype=int)
    first = {}
    for i, z in enumerate(assignment.tolist()):
        key = z if z >= 0 else ("extra", i)
        if key not in first:
            first[key] = len(cover)
            cover.append(E[i])
        owner[i] = first[key]
    cover = np.array(cover)
    return CoveringReport(r, R, cover, len(cover), int(Z.shape[0]), owner, int(len(set(assignment.tolist()))))


def boundary_samples(domain, y, radius, h):
    """Points on the boundary inside B_radius(y), with outward normals."""
    domain = make_domain(domain)
    d = domain.dimension
    y = _vec(y, d)
    K = int(math.ceil(radius / h))
    ax = np.arange(-K, K + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = y + h * np.stack([m.ravel() for m in mesh], axis=1)
    pts = pts[np.linalg.norm(pts - y, axis=1) < radius]
    s = domain.sdf(pts)
    band = np.isfinite(s) & (np.abs(s) < h)
    if not np.any(band):
        return np.zeros((0, d)), np.zeros((0, d))
    p = domain.project(pts[band], iterations=5)
    ok = np.abs(domain.sdf(p)) < 1e-8
    p = p[ok]
    nrm = domain.normal(p)
    good = np.all(np.isfinite(nrm), axis=1)
    return p[good], nrm[good]


def check_interior_ball(domain, y, radius, h, rho=None, tol=None):
    """Spot-check the interior ball condition on a boundary sample.

    Returns the worst deficit rho - sdf(xi - rho nu); non-positive means the
    condition held at every sampled point.
    """
    domain = make_domain(domain)
    rho = domain.interior_ball_radius if rho is None else rho
    if rho is None:
        raise ConfigError("no interior ball radius declared")
    rho = min(rho, 10.0)
    pts, nrm = boundary_samples(domain, y, radius, h)
    if pts.shape[0] == 0:
        return -math.inf
    centers = pts - rho * nrm
    return float(np.max(rho - domain.sdf(centers)))
