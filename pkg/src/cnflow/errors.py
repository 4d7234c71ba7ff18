"""Error norms between trajectories and rate fitting.

Pressure errors follow the midpoint-rule protocol: both piecewise
constant pressures are evaluated at the midpoints of the (uniform, finer)
reference mesh, a spatial norm is applied to the difference, and the
values are composed in time either by the midpoint-rule L2 sum or by a
maximum.  Weighted variants multiply each sample by the smoothing weight
of the coarse-mesh interval containing it, and a window ``(t_n0, T]``
restricts the samples.
"""

from dataclasses import dataclass, field

import numpy as np

PRESSURE_NORMS = ("pressure_L2l2", "pressure_Linfl2")
VELOCITY_NORMS = ("velocity_LinfV1", "velocity_L2V2avg")


@dataclass(frozen=True)
class ErrorSpec:
    """Selection of one error norm.

    ``window_start`` is the number of leading coarse intervals excluded
    from the evaluation window ``(t_{n0}, T]``; weighted norms use it to
    skip the Euler prefix.  ``spatial`` picks the spatial composition:
    ``"mass"`` (mass-matrix weighted, mesh-size independent) or
    ``"nodal"`` (plain Euclidean norm of coefficient differences).
    """

    norm: str
    alpha: float = 0.0
    window_start: int = 0
    spatial: str = "mass"

    def __post_init__(self):
        if self.norm not in PRESSURE_NORMS + VELOCITY_NORMS:
            raise ValueError(f"unknown norm id {self.norm!r}")
        if self.alpha < 0.0:
            raise ValueError("weight exponent must be nonnegative")
        if self.window_start < 0:
            raise ValueError("window start must be nonnegative")
        if self.spatial not in ("mass", "nodal"):
            raise ValueError(f"unknown spatial norm flavor {self.spatial!r}")

    @property
    def label(self):
        return self.norm


@dataclass
class ConvergenceRow:
    k: float
    n0: int
    alpha: float
    norm: str
    error: float


@dataclass
class ConvergenceRecord:
    """Rows of a convergence study plus fitted rates."""

    rows: list = field(default_factory=list)

    def add(self, k, n0, alpha, norm, error):
        self.rows.append(ConvergenceRow(float(k), int(n0), float(alpha), norm, float(error)))

    def norms(self):
        seen = []
        for r in self.rows:
            if r.norm not in seen:
                seen.append(r.norm)
        return seen

    def series(self, norm):
        rows = sorted((r for r in self.rows if r.norm == norm), key=lambda r: -r.k)
        return np.array([r.k for r in rows]), np.array([r.error for r in rows])

    def fit(self, norm):
        sub = ConvergenceRecord([r for r in self.rows if r.norm == norm])
        return fit_rate(sub)

    def to_csv(self):
        """CSV text with header ``k,n0,alpha,norm,error,rate_pairwise``.

        Rows are emitted per norm in descending k; the pairwise rate
        column is empty on the first row of each norm.
        """
        lines = ["k,n0,alpha,norm,error,rate_pairwise"]
        for norm in self.norms():
            rows = sorted((r for r in self.rows if r.norm == norm), key=lambda r: -r.k)
            prev = None
            for r in rows:
                rate = ""
                if prev is not None and r.error > 0.0 and prev.error > 0.0:
                    rate = repr(float(np.log(prev.error / r.error) / np.log(prev.k / r.k)))
                lines.append(f"{r.k!r},{r.n0},{r.alpha!r},{r.norm},{r.error!r},{rate}")
                prev = r
        return "\n".join(lines) + "\n"


@dataclass
class RateFit:
    """Least-squares slope of log error against log step size."""

    k_values: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    pairwise: np.ndarray

    def csv_row(self):
        pair = ";".join(repr(float(p)) for p in self.pairwise)
        return f"{self.slope!r},{pair}"


def fit_loglog(k_values, errors):
    """Fit ``log(error) = slope * log(k) + c`` and the pairwise rates."""
    k = np.asarray(k_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if k.size < 2 or np.unique(k).size < 2:
        raise ValueError("need at least two distinct step sizes")
    if np.any(e <= 0.0):
        raise ValueError("errors must be positive for a log-log fit "
                         "(zero error signals an exact match or a bug)")
    order = np.argsort(-k)
    k, e = k[order], e[order]
    A = np.vstack([np.log(k), np.ones_like(k)]).T
    slope, intercept = np.linalg.lstsq(A, np.log(e), rcond=None)[0]
    pairwise = np.log(e[:-1] / e[1:]) / np.log(k[:-1] / k[1:])
    return RateFit(k, e, float(slope), float(intercept), pairwise)


def fit_rate(record):
    """Rate fit over the rows of a single-norm convergence record."""
    norms = record.norms()
    if len(norms) != 1:
        raise ValueError("record must contain exactly one norm id")
    k, e = record.series(norms[0])
    return fit_loglog(k, e)


def _spatial_norm_fn(spec, space):
    if spec.spatial == "nodal":
        return lambda d: float(np.sqrt(np.dot(d, d)))
    if space is None:
        raise ValueError("mass-weighted norms need a trajectory with a spatial space")
    if spec.norm in PRESSURE_NORMS:
        M = space.pressure_mass
    else:
        M = space.mass
    return lambda d: float(np.sqrt(d @ (M @ d)))


def _window_mask(times, coarse_mesh, window_start):
    if window_start >= coarse_mesh.num_intervals:
        raise ValueError("window start leaves no intervals")
    t_start = coarse_mesh.nodes[window_start]
    mask = times > t_start
    if not np.any(mask):
        raise ValueError("window contains no evaluation times")
    return mask


def _weights(times, coarse_mesh, alpha):
    if alpha == 0.0:
        return np.ones_like(times)
    idx = np.atleast_1d(coarse_mesh.interval_of(times))
    return np.minimum(coarse_mesh.nodes[idx - 1], 1.0) ** alpha


def _check_pair(traj, ref):
    if traj.space is not None and ref.space is not None and traj.space is not ref.space:
        raise ValueError("trajectories live on different spatial spaces")
    if traj.pressure.values.shape[1:] != ref.pressure.values.shape[1:]:
        raise ValueError("coefficient dimensions do not match")


def midpoint_reconstruction(pressure, ts):
    """Pressure samples read as midpoint values, interpolated in time.

    The n-th piecewise-constant pressure value approximates the pressure
    at the interval midpoint (that is where it is second-order accurate),
    so for comparison at other times the values are anchored at the
    midpoints and interpolated piecewise linearly, with linear extension
    beyond the outermost anchors.  Evaluating at the anchors themselves
    returns the stored values exactly; in particular the reconstruction
    of a trajectory at its own midpoints is the identity.
    """
    anchors = pressure.mesh.midpoints
    vals = pressure.values
    ts = np.asarray(ts, dtype=float)
    if anchors.size == 1:
        return np.broadcast_to(vals[0], (ts.size,) + vals.shape[1:]).copy()
    seg = np.clip(np.searchsorted(anchors, ts), 1, anchors.size - 1)
    theta = (ts - anchors[seg - 1]) / (anchors[seg] - anchors[seg - 1])
    theta = theta.reshape((-1,) + (1,) * (vals.ndim - 1))
    return (1.0 - theta) * vals[seg - 1] + theta * vals[seg]


def pressure_error(traj, ref, spec):
    """Midpoint-rule pressure error of ``traj`` against the reference.

    Both pressures are read as midpoint samples (see
    ``midpoint_reconstruction``) and compared at the reference midpoints
    inside the window, where the reference reconstruction is exactly its
    stored values; the smoothing weight of the coarse interval containing
    each midpoint multiplies the spatial norm of the difference.
    """
    if spec.norm not in PRESSURE_NORMS:
        raise ValueError(f"{spec.norm} is not a pressure norm")
    _check_pair(traj, ref)
    fine = ref.mesh
    k0 = fine.steps[0]
    tm = fine.midpoints
    mask = _window_mask(tm, traj.mesh, spec.window_start)
    tm = tm[mask]
    d = midpoint_reconstruction(traj.pressure, tm) - ref.pressure.values[mask]
    norm_fn = _spatial_norm_fn(spec, traj.space or ref.space)
    q = np.array([norm_fn(di) for di in d])
    w = _weights(tm, traj.mesh, spec.alpha)
    if spec.norm == "pressure_L2l2":
        return float(np.sqrt(np.sum(k0 * (w * q) ** 2)))
    return float(np.max(w * q))


def velocity_error(traj, ref, spec):
    """Velocity error of ``traj`` against the reference.

    ``velocity_LinfV1`` takes the maximum over reference nodes (inside
    the window) of the stiffness-weighted seminorm of the difference of
    the piecewise-linear evaluations.  ``velocity_L2V2avg`` measures the
    per-coarse-interval averages of the difference in a discrete
    H2-proxy seminorm (stiffness applied to the recovered gradient
    components); the proxy stands in for the exact second-order norm,
    which is unavailable in H1-conforming elements.
    """
    if spec.norm not in VELOCITY_NORMS:
        raise ValueError(f"{spec.norm} is not a velocity norm")
    _check_pair_velocity(traj, ref)
    space = traj.space or ref.space
    if space is None:
        raise ValueError("velocity errors need a trajectory with a spatial space")

    if spec.norm == "velocity_LinfV1":
        ts = ref.mesh.nodes
        mask = _window_mask(ts, traj.mesh, spec.window_start)
        ts = ts[mask]
        S = space.stiffness
        w = _weights(ts, traj.mesh, spec.alpha)
        best = 0.0
        for t, wt in zip(ts, w):
            d = traj.velocity.evaluate(t) - ref.velocity.evaluate(t)
            best = max(best, wt * float(np.sqrt(d @ (S @ d))))
        return best

    # velocity_L2V2avg
    coarse = traj.mesh
    if spec.window_start >= coarse.num_intervals:
        raise ValueError("window start leaves no intervals")
    acc = 0.0
    wvals = coarse.tau_values(spec.alpha)
    for n in range(spec.window_start, coarse.num_intervals):
        a, b = coarse.nodes[n], coarse.nodes[n + 1]
        kn = coarse.steps[n]
        avg_traj = 0.5 * (traj.velocity.values[n] + traj.velocity.values[n + 1])
        avg_ref = integrate_cg1(ref.velocity, a, b) / kn
        q = space.h2_proxy_seminorm(avg_traj - avg_ref)
        acc += kn * (wvals[n] * q) ** 2
    return float(np.sqrt(acc))


def _check_pair_velocity(traj, ref):
    if traj.space is not None and ref.space is not None and traj.space is not ref.space:
        raise ValueError("trajectories live on different spatial spaces")
    if traj.velocity.values.shape[1:] != ref.velocity.values.shape[1:]:
        raise ValueError("coefficient dimensions do not match")


def integrate_cg1(u, a, b):
    """Exact integral of a piecewise-linear grid function over ``[a, b]``."""
    mesh = u.mesh
    if not (0.0 <= a <= b <= mesh.T * (1 + 1e-12)):
        raise ValueError("integration bounds outside the mesh")
    b = min(b, mesh.T)
    if a == b:
        return np.zeros_like(u.values[0])

    def antider(t):
        # integral from t_0 to t
        n = mesh.interval_of(t)
        full = _cum_trapz(u)
        t0 = mesh.nodes[n - 1]
        dt = t - t0
        v0 = u.values[n - 1]
        slope = (u.values[n] - u.values[n - 1]) / mesh.steps[n - 1]
        return full[n - 1] + dt * v0 + 0.5 * dt * dt * slope

    return antider(b) - antider(a)


def _cum_trapz(u):
    if not hasattr(u, "_cumint"):
        seg = 0.5 * (u.values[:-1] + u.values[1:])
        k = u.mesh.steps.reshape((-1,) + (1,) * (seg.ndim - 1))
        cum = np.concatenate([np.zeros((1,) + seg.shape[1:]), np.cumsum(seg * k, axis=0)])
        u._cumint = cum
    return u._cumint
