"""Semilinear reaction-diffusion runs on truncated domains and zero-state classification.

The linear part (diffusion, drift, boundary rows) is treated implicitly with a
cached sparse factorisation, the reaction explicitly:

    (I + dt M) u^{n+1} = u^n + dt f(x, u^n) + dt D g,

where M is the assembled discrete -L (without c) and D g carries the cap
values u0 pinned on the truncation frontier.
"""

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .errors import BlowUp, ConfigError, NoFront, ObleigError
from .expr import Expression, point_env
from .geometry import make_domain, truncate
from .operators import assemble, make_boundary, make_operator


# reaction ------------------------------------------------------------------

@dataclass
class ReactionSpec:
    f: object                  # callable (points, s) -> array
    fs0: object                # callable points -> array
    kpp_declared: bool = False
    saturation_S: float = None
    config: dict = field(default_factory=dict)

    def __call__(self, points, s):
        return self.f(points, s)

    def lipschitz(self, points, s_max, n_s=41):
        """max |df/ds| over the points and s in [0, s_max], by differences."""
        s = np.linspace(0.0, max(s_max, 1e-12), n_s)
        worst = 0.0
        for a, b in zip(s[:-1], s[1:]):
            fa = self.f(points, np.full(points.shape[0], a))
            fb = self.f(points, np.full(points.shape[0], b))
            worst = max(worst, float(np.max(np.abs(fb - fa))) / (b - a))
        return worst

    def check(self, points, s_max=2.0, n_s=21, tol=1e-12):
        """Check f(x, 0) = 0, the KPP bound and saturation on a sample grid."""
        n = points.shape[0]
        f0 = self.f(points, np.zeros(n))
        if np.max(np.abs(f0)) > tol:
            raise ConfigError("reaction does not vanish at s = 0")
        fs = self.fs0(points)
        for s in np.linspace(0.0, s_max, n_s)[1:]:
            fv = self.f(points, np.full(n, s))
            if self.kpp_declared and np.any(fv > fs * s + 1e-10):
                raise ConfigError(f"KPP bound f(x,s) <= f_s(x,0) s fails at s = {s:.3g}")
            if self.saturation_S is not None and s >= self.saturation_S and np.any(fv > 1e-12):
                raise ConfigError(f"saturation fails at s = {s:.3g}")
        return True


def make_reaction(cfg):
    """Reaction block {"f": expr in x, y, s, "kpp": bool, "saturation": S, "fs0": expr}."""
    if isinstance(cfg, ReactionSpec):
        return cfg
    if isinstance(cfg, str):
        cfg = {"f": cfg}
    cfg = dict(cfg)
    ex = Expression(str(cfg["f"]))
    bad = set(ex.variables) - {"x", "y", "s"}
    if bad:
        raise ConfigError(f"reaction may only use x, y, s: {cfg['f']!r}")
    if "fs0" in cfg:
        d_ex = Expression(str(cfg["fs0"]))
        fs0 = lambda p: d_ex(**point_env(p)) + 0.0 * p[:, 0]
    else:
        d_ex = ex.diff("s")

        def fs0(p):
            env = point_env(p)
            env["s"] = np.zeros(p.shape[0])
            return d_ex(**env)

    def f(p, s):
        env = point_env(p)
        env["s"] = np.asarray(s, dtype=float)
        return ex(**env)

    sat = cfg.get("saturation")
    return ReactionSpec(f, fs0, bool(cfg.get("kpp", False)), None if sat is None else float(sat), cfg)


def initial_field(spec):
    """u0 from a number, an expression in x, y or a callable."""
    if callable(spec):
        return spec
    if isinstance(spec, (int, float)):
        v = float(spec)
        return lambda p: np.full(np.atleast_2d(p).shape[0], v)
    ex = Expression(str(spec))
    return lambda p: ex(**point_env(np.atleast_2d(p)))


def bump(center, radius=1.0, amplitude=1.0):
    """amplitude * (1 - |x - center|^2 / radius^2)^2 inside the ball, zero outside."""
    center = np.asarray(center, dtype=float)

    def u0(p):
        q = np.sum((np.atleast_2d(p) - center) ** 2, axis=1) / radius ** 2
        return amplitude * np.where(q < 1, (1 - q) ** 2, 0.0)

    return u0


# configuration and trajectories ---------------------------------------------

@dataclass
class SimConfig:
    grid: object
    L_linear: object
    B: object
    dt: float
    T: float
    u0: object
    snapshot_every: float = None
    ceiling: float = None
    cap_rule: str = "u = u0 on cap"

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError("dt and T must be positive")
        self.u0 = initial_field(self.u0)


@dataclass
class Trajectory:
    points: np.ndarray          # (n, d) unknown node positions
    weights: np.ndarray
    times: np.ndarray           # snapshot times
    values: np.ndarray          # (K, n) snapshots
    step_times: np.ndarray
    sup_trace: np.ndarray       # max |u| after every step
    min_trace: np.ndarray
    mass_trace: np.ndarray      # sum W u after every step
    lower_envelope: np.ndarray  # per node min over [T/2, T]
    upper_envelope: np.ndarray  # per node max over [T/2, T]
    initial: np.ndarray
    blowup_time: float = None
    dt: float = None

    @property
    def final(self):
        return self.values[-1]

    def window(self, box):
        box = np.asarray(box, dtype=float).reshape(self.points.shape[1], 2)
        return np.all((self.points >= box[:, 0]) & (self.points <= box[:, 1]), axis=1)


def build_stepper(config):
    """Assemble M for L without c, and return (system, factorisation, Dg)."""
    system = assemble(config.grid, config.L_linear.without_c(), config.B)
    n = system.size
    op = (sps.identity(n, format="csc") + config.dt * system.matrix).tocsc()
    lu = splu(op)
    g = np.zeros(system.dirichlet_points.shape[0])
    caps = system.dirichlet_tags == 0
    if np.any(caps):
        g[caps] = config.u0(system.dirichlet_points[caps])
    return system, lu, system.dirichlet_matrix @ g


def evolve(config, reaction, observer=None, check_budget=True):
    """IMEX time stepping; returns a Trajectory.

    observer(t, u) is called after every step (and once at t = 0) and may
    return True to stop early.
    """
    system, lu, Dg = build_stepper(config)
    pts = system.points
    u = np.asarray(config.u0(pts), dtype=float)
    sup0 = float(np.max(np.abs(u))) if u.size else 0.0
    ceiling = config.ceiling if config.ceiling is not None else 1e6 * (1.0 + sup0)
    if check_budget:
        s_max = max(sup0, reaction.saturation_S or 0.0, 1.0)
        lip = reaction.lipschitz(pts, s_max)
        if config.dt * lip > 0.5:
            raise ConfigError(f"dt * Lip(f) = {config.dt * lip:.3g} exceeds 0.5")
    n_steps = int(round(config.T / config.dt))
    every = config.snapshot_every or config.T
    snap_stride = max(1, int(round(every / config.dt)))
    half = n_steps // 2
    times, snaps = [0.0], [u.copy()]
    step_t = np.zeros(n_steps + 1)
    sup_tr = np.zeros(n_steps + 1)
    min_tr = np.zeros(n_steps + 1)
    mass_tr = np.zeros(n_steps + 1)
    sup_tr[0], min_tr[0], mass_tr[0] = sup0, float(np.min(u)), float(np.dot(system.weights, u))
    lower = np.full(u.size, np.inf)
    upper = np.full(u.size, -np.inf)
    if half == 0:
        lower, upper = u.copy(), u.copy()
    initial = u.copy()
    blowup = None
    if observer is not None:
        observer(0.0, u)
    k = 0
    for k in range(1, n_steps + 1):
        t = k * config.dt
        rhs = u + config.dt * (reaction(pts, u) + Dg)
        u = lu.solve(rhs)
        step_t[k] = t
        sup_tr[k] = float(np.max(np.abs(u)))
        min_tr[k] = float(np.min(u))
        mass_tr[k] = float(np.dot(system.weights, u))
        if k >= half:
            np.minimum(lower, u, out=lower)
            np.maximum(upper, u, out=upper)
        if k % snap_stride == 0 or k == n_steps:
            times.append(t)
            snaps.append(u.copy())
        if not np.isfinite(sup_tr[k]) or sup_tr[k] > ceiling:
            blowup = t
            break
        if observer is not None and observer(t, u):
            break
    m = k + 1
    traj = Trajectory(pts, system.weights, np.array(times), np.array(snaps), step_t[:m], sup_tr[:m],
                      min_tr[:m], mass_tr[:m], lower, upper, initial, blowup, config.dt)
    if blowup is not None:
        err = BlowUp(f"sup norm exceeded {ceiling:.3g} at t = {blowup:.4g}", blowup)
        err.trajectory = traj
        raise err
    return traj


def write_csv(trajectory, path):
    """Long-format snapshots: t, node_x[, node_y], u."""
    d = trajectory.points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node_x"] + (["node_y"] if d > 1 else []) + ["u"])
        for t, vals in zip(trajectory.times, trajectory.values):
            for p, v in zip(trajectory.points, vals):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in p] + [repr(float(v))])


OBLP_MAGIC = b"OBLP"


def write_oblp(trajectory, target):
    """Binary frames: magic, <u32 dims, u32 nodes>, node coordinates, then per frame t and values.

    target is a path or a writable binary stream.
    """
    if hasattr(target, "write"):
        _write_oblp(trajectory, target)
    else:
        with open(target, "wb") as fh:
            _write_oblp(trajectory, fh)


def _write_oblp(trajectory, fh):
    pts = np.ascontiguousarray(trajectory.points, dtype="<f8")
    n, d = pts.shape
    fh.write(OBLP_MAGIC)
    fh.write(struct.pack("<II", d, n))
    fh.write(pts.tobytes())
    for t, vals in zip(trajectory.times, trajectory.values):
        fh.write(struct.pack("<d", float(t)))
        fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def read_oblp(path):
    """Inverse of write_oblp: returns (points, times, values)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != OBLP_MAGIC:
        raise ConfigError("not an OBLP stream")
    d, n = struct.unpack_from("<II", data, 4)
    off = 12
    pts = np.frombuffer(data, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += 8 * n * d
    frame = 8 * (n + 1)
    k = (len(data) - off) // frame
    times = np.empty(k)
    vals = np.empty((k, n))
    for i in range(k):
        times[i] = struct.unpack_from("<d", data, off)[0]
        vals[i] = np.frombuffer(data, dtype="<f8", count=n, offset=off + 8)
        off += frame
    return pts.copy(), times, vals


# classification -------------------------------------------------------------

CLASSES = ("converges_uniformly_to_zero", "converges_locally_to_zero", "locally_repelled",
           "uniformly_repelled", "grows_unbounded", "inconclusive")

DEFAULT_THRESHOLDS = {"zero": 1e-3, "repel_factor": 10.0, "growth_factor": 10.0}


@dataclass
class StabilityVerdict:
    classification: str
    inf_liminf_estimate: float
    sup_norm_trace: np.ndarray
    front_speed: float = None
    window_sups: list = None
    window_envelopes: list = None
    initial_sup: float = None
    growth_ratio: float = None
    thresholds: dict = None
    rule: str = ("finite-horizon surrogate: envelopes over [T/2, T]; zero if window sup < zero; "
                 "repelled if window envelope > repel_factor * initial sup; first probe is the central window")

    def to_json(self):
        return {"classification": self.classification,
                "inf_liminf_estimate": self.inf_liminf_estimate,
                "window_sups": self.window_sups, "window_envelopes": self.window_envelopes,
                "initial_sup": self.initial_sup, "growth_ratio": self.growth_ratio,
                "front_speed": self.front_speed, "thresholds": self.thresholds, "rule": self.rule,
                "final_sup": float(self.sup_norm_trace[-1, 1]) if len(self.sup_norm_trace) else None}


def default_probes(grid):
    """Central window of half-width min(10, r/4) and two windows halfway to the frontier."""
    d = grid.dimension
    y, r = grid.center, grid.radius
    w = min(10.0, r / 4)
    probes = [[[y[k] - w, y[k] + w] for k in range(d)]]
    for sgn in (1, -1):
        c = y.copy()
        c[0] += sgn * r / 2
        probes.append([[c[k] - w, c[k] + w] for k in range(d)])
    return probes


def classify_trajectory(traj, probes, thresholds=None, blowup=False):
    th = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
    trace = np.stack([traj.step_times, traj.sup_trace], axis=1)
    sup0 = float(np.max(np.abs(traj.initial)))
    sups, envs = [], []
    for box in probes:
        m = traj.window(box)
        if not np.any(m):
            sups.append(math.nan)
            envs.append(math.nan)
            continue
        sups.append(float(np.max(np.abs(traj.upper_envelope[m]))))
        envs.append(float(np.min(traj.lower_envelope[m])))
    half = len(traj.sup_trace) // 2
    s_half = traj.sup_trace[half] if len(traj.sup_trace) else math.nan
    growth = float(traj.sup_trace[-1] / s_half) if s_half > 0 else math.inf
    valid = [i for i, s in enumerate(sups) if math.isfinite(s)]
    inf_env = float(min(envs[i] for i in valid)) if valid else math.nan
    if blowup or growth >= th["growth_factor"]:
        cls = "grows_unbounded"
    elif valid and all(sups[i] < th["zero"] for i in valid):
        cls = "converges_uniformly_to_zero"
    elif math.isfinite(sups[0]) and sups[0] < th["zero"]:
        cls = "converges_locally_to_zero"
    elif valid and all(envs[i] > th["repel_factor"] * sup0 for i in valid):
        cls = "uniformly_repelled"
    elif math.isfinite(envs[0]) and envs[0] > th["repel_factor"] * sup0:
        cls = "locally_repelled"
    else:
        cls = "inconclusive"
    return StabilityVerdict(cls, inf_env, trace, None, sups, envs, sup0, growth, th)


def classify_zero_state(config, reaction, probes=None, thresholds=None, trajectory=None):
    """Run (or reuse) a trajectory and classify the fate of the zero state."""
    blow = False
    if trajectory is None:
        try:
            trajectory = evolve(config, reaction)
        except BlowUp as exc:
            trajectory = exc.trajectory
            blow = True
    else:
        blow = trajectory.blowup_time is not None
    probes = probes or default_probes(config.grid)
    return classify_trajectory(trajectory, probes, thresholds, blow)


# experiments ----------------------------------------------------------------

@dataclass
class HairTriggerReport:
    inf_liminf_estimate: float
    per_window_envelopes: list
    larger_envelopes: list
    truncation_sensitive: bool
    radii: tuple
    final_sup: float


def hair_trigger_experiment(domain, A_field, f, u0_spec, T, windows, radii, h, dt,
                            center=None, boundary=None, b=None):
    """Run on two truncations and report window lower envelopes over [T/2, T] on the smaller one."""
    domain = make_domain(domain)
    d = domain.dimension
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    L = make_operator({"A": A_field, "b": b}, d)
    B = make_boundary(boundary or {"kind": "neumann"}, d)
    reaction = make_reaction(f)
    envs = []
    finals = []
    for r in radii:
        grid = truncate(domain, center, r, h)
        traj = evolve(SimConfig(grid, L, B, dt, T, u0_spec), reaction)
        e = []
        for box in windows:
            m = traj.window(box)
            e.append(float(np.min(traj.lower_envelope[m])) if np.any(m) else math.nan)
        envs.append(e)
        finals.append(float(traj.sup_trace[-1]))
    small, large = envs[0], envs[-1]
    sensitive = any(abs(a - b_) > 0.05 * max(abs(b_), 1e-6) for a, b_ in zip(small, large))
    return HairTriggerReport(float(np.nanmin(small)), small, large, bool(sensitive), tuple(radii), finals[0])


@dataclass
class ComparisonReport:
    ok: bool
    initially_ordered: bool
    worst_gap: float
    checked_steps: int


def comparison_check(config, reaction, v, orientation="super", t_start=0.0, tol=1e-10):
    """Check u <= v (super) or u >= v (sub) along the trajectory for t >= t_start.

    v is a callable (t, points) -> values or a fixed node vector.
    """
    if orientation not in ("super", "sub"):
        raise ConfigError("orientation must be 'super' or 'sub'")
    sign = 1.0 if orientation == "super" else -1.0
    state = {"worst": -math.inf, "steps": 0, "init": None}
    pts_holder = {}

    def values(t, pts):
        if callable(v):
            return np.asarray(v(t, pts), dtype=float)
        return np.asarray(v, dtype=float)

    def obs(t, u):
        if "pts" not in pts_holder:
            return False
        if t < t_start - 1e-12:
            return False
        gap = float(np.max(sign * (u - values(t, pts_holder["pts"]))))
        if state["init"] is None:
            state["init"] = gap <= tol
        state["worst"] = max(state["worst"], gap)
        state["steps"] += 1
        return False

    system, _, _ = build_stepper(config)
    pts_holder["pts"] = system.points
    evolve(config, reaction, observer=obs)
    ok = state["worst"] <= tol
    return ComparisonReport(bool(ok), bool(state["init"]), float(state["worst"]), state["steps"])


def front_positions(traj, level=0.5, axis=0, times=None):
    """Rightmost crossing of the level along the axis through the centre line, per snapshot."""
    pts = traj.points
    d = pts.shape[1]
    if d > 1:
        other = [k for k in range(d) if k != axis]
        ref = np.median(pts[:, other], axis=0)
        dist = np.linalg.norm(pts[:, other] - ref, axis=1)
        line = dist <= dist.min() + 1e-12
    else:
        line = np.ones(pts.shape[0], dtype=bool)
    order = np.argsort(pts[line, axis])
    xs = pts[line, axis][order]
    out_t, out_x = [], []
    for t, vals in zip(traj.times, traj.values):
        if times is not None and not (times[0] - 1e-12 <= t <= times[1] + 1e-12):
            continue
        u = vals[line][order]
        above = np.flatnonzero(u >= level)
        if above.size == 0:
            raise NoFront(f"no point at level {level} at t = {t:.4g}")
        i = int(above[-1])
        if i + 1 < u.size:
            x0, x1, u0_, u1 = xs[i], xs[i + 1], u[i], u[i + 1]
            x = x0 + (u0_ - level) / (u0_ - u1) * (x1 - x0) if u0_ != u1 else x0
        else:
            x = xs[i]
        out_t.append(float(t))
        out_x.append(float(x))
    return np.array(out_t), np.array(out_x)


def measure_front_speed(traj, level=0.5, window=None, axis=0):
    """Least-squares slope of the rightmost level crossing over the time window (default: second half)."""
    if not 0 < level < 1:
        raise ConfigError("level must lie in (0, 1)")
    if window is None:
        T = float(traj.times[-1])
        window = (T / 2, T)
    t, x = front_positions(traj, level, axis, window)
    if t.size < 3:
        raise NoFront("fewer than three snapshots in the window")
    slope, _ = np.polyfit(t, x, 1)
    return float(slope)


def simulation_config(domain, center, r, h, dt, T, operator, boundary, u0, snapshot_every=None):
    """Convenience: truncate, build operators from config blocks and return a SimConfig."""
    domain = make_domain(domain)
    d = domain.dimension
    grid = truncate(domain, center, r, h)
    L = make_operator(operator, d)
    B = make_boundary(boundary, d)
    return SimConfig(grid, L, B, dt, T, u0, snapshot_every)
