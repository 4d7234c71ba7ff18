"""Time-discrete function spaces and the temporal projection operators.

Grid functions live over an abstract coefficient space: values are numpy
arrays of any fixed shape (scalars included).  ``GridFunctionCG1`` is
continuous piecewise linear with one value per node; ``GridFunctionDG0``
is piecewise constant with one value per interval, evaluated with the
right-closed interval convention ``I^n = (t_{n-1}, t_n]``.

The three projection operators are nodal interpolation onto the
piecewise-linear space, interval averaging (the L2-projection onto the
piecewise constants) and constant continuation of midpoint values.
"""

import numpy as np


class TimeCallable:
    """Time-dependent coefficient vector ``t -> u(t)``.

    Optional first and second time derivative handles travel along; they
    are never required by the operators but convenient for oracles.
    """

    def __init__(self, fn, dt=None, dtt=None):
        self.fn = fn
        self.dt = dt
        self.dtt = dtt

    def __call__(self, t):
        return np.asarray(self.fn(t), dtype=float)


class GridFunctionCG1:
    """Continuous piecewise-linear grid function (one value per node)."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.num_intervals + 1:
            raise ValueError("need one value per mesh node")
        self.mesh = mesh
        self.values = values

    @property
    def node_values(self):
        return self.values

    def evaluate(self, t):
        """Affine interpolant on the containing interval."""
        n = self.mesh.interval_of(t)
        t0 = self.mesh.nodes[n - 1]
        theta = (t - t0) / self.mesh.steps[n - 1]
        theta = min(max(theta, 0.0), 1.0)
        return (1.0 - theta) * self.values[n - 1] + theta * self.values[n]

    def evaluate_many(self, ts):
        ts = np.asarray(ts, dtype=float)
        n = np.atleast_1d(self.mesh.interval_of(ts))
        t0 = self.mesh.nodes[n - 1]
        theta = np.clip((ts - t0) / self.mesh.steps[n - 1], 0.0, 1.0)
        theta = theta.reshape((-1,) + (1,) * (self.values.ndim - 1))
        return (1.0 - theta) * self.values[n - 1] + theta * self.values[n]


class GridFunctionDG0:
    """Piecewise-constant grid function (one value per interval)."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.num_intervals:
            raise ValueError("need one value per mesh interval")
        self.mesh = mesh
        self.values = values

    @property
    def interval_values(self):
        return self.values

    def evaluate(self, t):
        return self.values[self.mesh.interval_of(t) - 1]

    def evaluate_many(self, ts):
        n = np.atleast_1d(self.mesh.interval_of(np.asarray(ts, dtype=float)))
        return self.values[n - 1]


_GAUSS_CACHE = {}


def gauss_rule(npts):
    """Gauss-Legendre nodes/weights on [-1, 1], cached."""
    if npts not in _GAUSS_CACHE:
        _GAUSS_CACHE[npts] = np.polynomial.legendre.leggauss(npts)
    return _GAUSS_CACHE[npts]


def interval_average(fn, a, b, npts=3):
    """Gauss approximation of ``(b - a)^{-1} \\int_a^b fn``."""
    x, w = gauss_rule(npts)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    acc = None
    for xi, wi in zip(x, w):
        val = wi * np.asarray(fn(mid + half * xi), dtype=float)
        acc = val if acc is None else acc + val
    return 0.5 * acc


def interpolate_nodal(u, mesh):
    """Nodal interpolation of a time callable onto the piecewise linears."""
    vals = np.stack([np.asarray(u(t), dtype=float) for t in mesh.nodes])
    return GridFunctionCG1(mesh, vals)


def average(u, mesh=None, quadrature_order=3):
    """Interval averaging (L2-projection onto the piecewise constants).

    For a piecewise-linear grid function the average is the exact endpoint
    mean; for a time callable each interval is integrated with a Gauss
    rule of at least three points.
    """
    if isinstance(u, GridFunctionCG1):
        m = u.mesh
        return GridFunctionDG0(m, 0.5 * (u.values[:-1] + u.values[1:]))
    if isinstance(u, GridFunctionDG0):
        return GridFunctionDG0(u.mesh, u.values.copy())
    if mesh is None:
        raise ValueError("mesh required when averaging a time callable")
    if quadrature_order < 3:
        raise ValueError("need at least 3 Gauss points per interval")
    vals = np.stack([
        interval_average(u, mesh.nodes[n], mesh.nodes[n + 1], quadrature_order)
        for n in range(mesh.num_intervals)
    ])
    return GridFunctionDG0(mesh, vals)


def midpoint_sample(u, mesh):
    """Constant continuation of the interval midpoint values."""
    vals = np.stack([np.asarray(u(t), dtype=float) for t in mesh.midpoints])
    return GridFunctionDG0(mesh, vals)


def time_derivative(u):
    """Piecewise-constant derivative of a piecewise-linear grid function."""
    if not isinstance(u, GridFunctionCG1):
        raise ValueError("time derivative defined for piecewise linears only")
    d = np.diff(u.values, axis=0)
    k = u.mesh.steps.reshape((-1,) + (1,) * (d.ndim - 1))
    return GridFunctionDG0(u.mesh, d / k)


_GAUSS2_THETA = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def weighted_temporal_norm(f, weight, p, spatial_norm, window=None):
    """Weighted temporal L2 or Linf norm of a grid function.

    Parameters
    ----------
    f : GridFunctionDG0 or GridFunctionCG1
    weight : SmoothingWeight
        Discrete weight ``tau_k^alpha`` on the same mesh.
    p : 2 or numpy.inf
        Temporal composition.
    spatial_norm : callable
        Maps a coefficient value to a nonnegative real.
    window : pair of ints, optional
        Half-open interval-index window ``(n_start, n_end]`` (1-based,
        default the whole mesh).

    For piecewise constants the L2 composition is the exact
    ``sqrt(sum_n k_n w_n^2 q_n^2)``; for piecewise linears each interval
    contributes the two-point Gauss quadrature of the squared norm of
    the affine interpolant, which is exact whenever the spatial norm is
    induced by an inner product.  The Linf composition takes the maximum
    of the endpoint norms per interval (the norm along an affine segment
    is convex, so the interval supremum sits at an endpoint).
    """
    mesh = f.mesh
    if weight.mesh is not mesh:
        raise ValueError("weight and grid function live on different meshes")
    N = mesh.num_intervals
    if window is None:
        window = (0, N)
    n_start, n_end = window
    if not (0 <= n_start < n_end <= N):
        raise ValueError(f"empty or invalid window {window}")
    w = weight.values()[n_start:n_end]
    k = mesh.steps[n_start:n_end]

    if isinstance(f, GridFunctionDG0):
        q = np.array([spatial_norm(v) for v in f.values[n_start:n_end]])
        if p == 2:
            return float(np.sqrt(np.sum(k * (w * q) ** 2)))
        if np.isinf(p):
            return float(np.max(w * q))
        raise ValueError("p must be 2 or inf")

    if isinstance(f, GridFunctionCG1):
        left = f.values[n_start:n_end]
        right = f.values[n_start + 1:n_end + 1]
        if p == 2:
            acc = 0.0
            for i in range(left.shape[0]):
                s = 0.0
                for theta in _GAUSS2_THETA:
                    s += 0.5 * spatial_norm((1.0 - theta) * left[i] + theta * right[i]) ** 2
                acc += k[i] * w[i] ** 2 * s
            return float(np.sqrt(acc))
        if np.isinf(p):
            best = 0.0
            for i in range(left.shape[0]):
                q = max(spatial_norm(left[i]), spatial_norm(right[i]))
                best = max(best, w[i] * q)
            return float(best)
        raise ValueError("p must be 2 or inf")

    raise ValueError("unsupported grid function type")
