"""Averages of the zeroth-order coefficient and audits of the eigenvalue inequality chains."""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fields import scalar_field
from .geometry import make_domain, truncate


@dataclass
class AveragesReport:
    center: list
    mean_sequence: list = None          # (r, average over Omega_r(y))
    mean_estimate: float = None
    least_mean_sequence: list = None    # (r, inf over centers of the average)
    least_mean_estimate: float = None
    centers_used: list = None
    argmin_centers: list = None
    coverage_spacing: float = None      # largest nearest-neighbour gap in the center list

    def rows(self):
        """CSV rows r, mean, least_mean, argmin_center."""
        means = dict(self.mean_sequence or [])
        least = dict(self.least_mean_sequence or [])
        arg = dict(zip([r for r, _ in (self.least_mean_sequence or [])], self.argmin_centers or []))
        out = []
        for r in sorted(set(means) | set(least)):
            a = arg.get(r)
            out.append({"r": r, "mean": means.get(r, ""), "least_mean": least.get(r, ""),
                        "argmin_center": "" if a is None else " ".join(repr(float(t)) for t in a)})
        return out


def liminf_surrogate(values):
    """Minimum over the last third of the sequence."""
    v = [x for x in values if math.isfinite(x)]
    if not v:
        return math.nan
    k = max(1, int(math.ceil(len(v) / 3)))
    return float(min(v[-k:]))


def average(domain, y, c, r, h):
    """Midpoint-rule average of c over Omega_r(y)."""
    c = scalar_field(c)
    grid = truncate(domain, y, r, h)
    vol = grid.mass()
    return grid.mass(c) / vol


def mean_of(domain, y, c, radii, h):
    """Averages of c over Omega_r(y) for each radius and their liminf surrogate."""
    domain = make_domain(domain)
    c = scalar_field(c)
    radii = [float(r) for r in radii]
    seq = [(r, average(domain, y, c, r, h)) for r in radii]
    return AveragesReport(list(map(float, np.atleast_1d(y))), mean_sequence=seq,
                          mean_estimate=liminf_surrogate([v for _, v in seq]))


def least_mean_of(domain, centers, c, radii, h):
    """Per radius the infimum over the given centers of the average; liminf surrogate as for the mean."""
    domain = make_domain(domain)
    c = scalar_field(c)
    if not centers:
        raise ConfigError("centers must be nonempty")
    cs = [list(map(float, np.atleast_1d(y))) for y in centers]
    radii = [float(r) for r in radii]
    seq, arg = [], []
    for r in radii:
        vals = [average(domain, y, c, r, h) for y in cs]
        j = int(np.argmin(vals))
        seq.append((r, float(vals[j])))
        arg.append(cs[j])
    pts = np.array(cs)
    if len(cs) > 1:
        dd = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(dd, np.inf)
        spacing = float(np.max(np.min(dd, axis=1)))
    else:
        spacing = math.inf
    return AveragesReport(cs[0], least_mean_sequence=seq,
                          least_mean_estimate=liminf_surrogate([v for _, v in seq]),
                          centers_used=cs, argmin_centers=arg, coverage_spacing=spacing)


def combine(mean_report, least_report):
    """Merge a mean report and a least-mean report into one."""
    return AveragesReport(mean_report.center, mean_report.mean_sequence, mean_report.mean_estimate,
                          least_report.least_mean_sequence, least_report.least_mean_estimate,
                          least_report.centers_used, least_report.argmin_centers,
                          least_report.coverage_spacing)


# relations -----------------------------------------------------------------

QUANTITIES = ("lambda_pb", "lambda_p", "lambda_b", "lambda", "Lambda", "mu_b")


def relation_edges(selfadjoint=False, oblique_positive=True):
    """Edges X <= Y of the inequality chains, tagged by the chain they come from."""
    edges = [("lambda_pb", "lambda_p", "i"), ("lambda_pb", "lambda_b", "i"),
             ("lambda_p", "lambda", "i"), ("lambda_b", "lambda", "i"), ("lambda", "Lambda", "i"),
             ("lambda_pb", "mu_b", "ii"), ("mu_b", "lambda", "ii")]
    if selfadjoint:
        edges.append(("lambda", "mu_b", "iii"))
    if oblique_positive:
        edges.append(("lambda_p", "mu_b", "iv"))
    return edges


def _closure(edges):
    """For each ordered pair X <=* Y, the chain tags along a shortest path."""
    adj = {}
    for a, b, tag in edges:
        adj.setdefault(a, []).append((b, tag))
    out = {}
    for src in QUANTITIES:
        seen = {src: ()}
        queue = deque([src])
        while queue:
            x = queue.popleft()
            for y, tag in adj.get(x, []):
                if y not in seen:
                    seen[y] = seen[x] + (tag,)
                    queue.append(y)
        for dst, tags in seen.items():
            if dst != src:
                out[(src, dst)] = tags
    return out


@dataclass
class Bound:
    quantity: str
    side: str           # "lower", "upper" or "estimate"
    value: float
    source: str = ""

    def __post_init__(self):
        if self.quantity not in QUANTITIES:
            raise ConfigError(f"unknown quantity {self.quantity!r}")
        if self.side not in ("lower", "upper", "estimate"):
            raise ConfigError(f"unknown side {self.side!r}")


@dataclass
class RelationsReport:
    checked: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def to_json(self):
        return {"ok": self.ok, "checked": self.checked, "violations": self.violations}


def relations_audit(bundle, selfadjoint=False, oblique_positive=True, tol=1e-6):
    """Check every applicable inequality between lower bounds, upper bounds and estimates.

    bundle is a list of Bound (or dicts with quantity, side, value, source).
    For every derived relation X <= Y, each lower bound or estimate of X must
    not exceed any upper bound or estimate of Y by more than tol.
    """
    items = [b if isinstance(b, Bound) else Bound(**b) for b in bundle]
    rel = _closure(relation_edges(selfadjoint, oblique_positive))
    report = RelationsReport()
    for (x, y), tags in sorted(rel.items()):
        lows = [b for b in items if b.quantity == x and b.side in ("lower", "estimate")]
        ups = [b for b in items if b.quantity == y and b.side in ("upper", "estimate")]
        for lo in lows:
            for up in ups:
                if lo.side == "estimate" and up.side == "estimate" and lo is up:
                    continue
                slack = up.value + tol - lo.value
                entry = {"relation": f"{x} <= {y}", "chains": list(tags), "lower": lo.value,
                         "lower_source": lo.source, "upper": up.value, "upper_source": up.source,
                         "slack": slack}
                report.checked.append(entry)
                if slack < 0:
                    report.violations.append(entry)
    return report
