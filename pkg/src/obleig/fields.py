"""Coefficient fields built from config blocks.

A scalar field maps an (N, d) array of points to an (N,) array. Matrix
fields return (N, d, d) and vector fields (N, d). Every field keeps the
config it was built from so scenarios round-trip through JSON.
"""

import numpy as np

from .errors import ConfigError
from .expr import Expression, point_env


def comb_indicator(x):
    """Indicator of the union of teeth [2^n, 2^n + n], n >= 1."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=bool)
    pos = x >= 2.0
    if np.any(pos):
        mant, ex = np.frexp(x[pos])
        n = (ex - 1).astype(float)
        out[pos] = x[pos] <= np.ldexp(1.0, ex - 1) + n
    return out


class ScalarField:
    def __init__(self, func, config, expression=None):
        self.func = func
        self.config = config
        self.expression = expression

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.broadcast_to(np.asarray(self.func(pts), dtype=float), (pts.shape[0],)).copy()

    @property
    def constant_value(self):
        if isinstance(self.config, (int, float)):
            return float(self.config)
        if isinstance(self.config, dict) and self.config.get("type") == "constant":
            return float(self.config["value"])
        if self.expression is not None and self.expression.is_constant():
            return float(self.expression())
        return None

    def __repr__(self):
        return f"ScalarField({self.config!r})"


def scalar_field(cfg):
    """Build a scalar field of the space variables from a config value."""
    if isinstance(cfg, ScalarField):
        return cfg
    if isinstance(cfg, (int, float)) and not isinstance(cfg, bool):
        v = float(cfg)
        return ScalarField(lambda p: np.full(p.shape[0], v), v)
    if isinstance(cfg, str):
        cfg = {"type": "expression", "expr": cfg}
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigError(f"bad scalar field config: {cfg!r}")
    kind = cfg["type"]
    axis = int(cfg.get("axis", 0))
    if kind == "constant":
        v = float(cfg["value"])
        return ScalarField(lambda p: np.full(p.shape[0], v), cfg)
    if kind == "step":
        left, right, at = float(cfg["left"]), float(cfg["right"]), float(cfg.get("at", 0.0))
        return ScalarField(lambda p: np.where(p[:, axis] < at, left, right), cfg)
    if kind == "prop_c_comb":
        return ScalarField(lambda p: 1.0 - 2.0 * comb_indicator(p[:, axis]), cfg)
    if kind == "square_wave":
        period = float(cfg.get("period", 2.0))
        high, low = float(cfg.get("high", 1.0)), float(cfg.get("low", -1.0))
        shift = float(cfg.get("shift", 0.0))

        def wave(p):
            phase = np.mod(p[:, axis] - shift, period) / period
            return np.where(phase < 0.5, high, low)

        return ScalarField(wave, cfg)
    if kind == "expression":
        ex = Expression(cfg["expr"])
        bad = set(ex.variables) - {"x", "y"}
        if bad:
            raise ConfigError(f"space field may only use x, y: {cfg['expr']!r}")
        return ScalarField(lambda p: ex(**point_env(p)), cfg, expression=ex)
    raise ConfigError(f"unknown scalar field type {kind!r}")


class MatrixField:
    def __init__(self, entries, dimension, config):
        self.entries = entries
        self.dimension = dimension
        self.config = config

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.dimension
        out = np.zeros((pts.shape[0], d, d))
        for i in range(d):
            for j in range(d):
                if self.entries[i][j] is not None:
                    out[:, i, j] = self.entries[i][j](pts)
        return out

    def diagonal(self, points, k):
        return self.entries[k][k](points)

    def has_cross_terms(self):
        return any(self.entries[i][j] is not None for i in range(self.dimension)
                   for j in range(self.dimension) if i != j)


def matrix_field(cfg, dimension):
    if isinstance(cfg, MatrixField):
        return cfg
    d = dimension
    entries = [[None] * d for _ in range(d)]
    if cfg is None:
        cfg = 1.0
    if isinstance(cfg, (int, float)) or isinstance(cfg, str):
        for k in range(d):
            entries[k][k] = scalar_field(cfg)
        return MatrixField(entries, d, cfg)
    if not isinstance(cfg, dict):
        raise ConfigError(f"bad matrix field config: {cfg!r}")
    kind = cfg.get("type")
    if kind == "constant":
        val = cfg["value"]
        if isinstance(val, (int, float)):
            for k in range(d):
                entries[k][k] = scalar_field(float(val))
        else:
            arr = np.asarray(val, dtype=float)
            if arr.shape != (d, d):
                raise ConfigError(f"matrix value must be {d}x{d}")
            for i in range(d):
                for j in range(d):
                    if arr[i, j] != 0.0 or i == j:
                        entries[i][j] = scalar_field(float(arr[i, j]))
        return MatrixField(entries, d, cfg)
    if kind == "diagonal":
        if len(cfg["entries"]) != d:
            raise ConfigError("diagonal needs one entry per dimension")
        for k, e in enumerate(cfg["entries"]):
            entries[k][k] = scalar_field(e)
        return MatrixField(entries, d, cfg)
    if kind == "matrix":
        rows = cfg["entries"]
        for i in range(d):
            for j in range(d):
                e = rows[i][j]
                if e not in (0, 0.0, None) or i == j:
                    entries[i][j] = scalar_field(e)
        return MatrixField(entries, d, cfg)
    raise ConfigError(f"unknown matrix field type {kind!r}")


class VectorField:
    def __init__(self, components, config):
        self.components = components
        self.config = config

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([c(pts) for c in self.components], axis=1)

    def is_zero(self):
        return all(c.constant_value == 0.0 for c in self.components)


def vector_field(cfg, dimension):
    if isinstance(cfg, VectorField):
        return cfg
    if cfg is None:
        cfg = [0.0] * dimension
    if isinstance(cfg, dict):
        if cfg.get("type") != "constant":
            raise ConfigError(f"bad vector field config: {cfg!r}")
        cfg_list = list(cfg["value"])
    else:
        cfg_list = list(cfg)
    if len(cfg_list) != dimension:
        raise ConfigError(f"vector field needs {dimension} components")
    return VectorField([scalar_field(c) for c in cfg_list], cfg)
