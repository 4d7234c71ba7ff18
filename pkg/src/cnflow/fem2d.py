"""Taylor-Hood (P2/P1) mixed finite elements on a triangulated rectangle.

The rectangle is subdivided into ``Nx x Ny`` cells, each split along the
south-west/north-east diagonal.  Velocity components use quadratic
elements (vertex plus edge-midpoint nodes), the pressure uses linears on
the vertices; the pairing is inf-sup stable so no stabilization terms
are needed.  All operators are assembled into scipy CSR matrices with a
degree-5 exact rule (7 points), which integrates every bilinear and
trilinear form of the pair exactly; load vectors and error quadrature
use a degree-6 exact rule (12 points).

Velocity coefficient vectors are component-blocked: the x-component
scalar coefficients come first, then the y-component.  Homogeneous
Dirichlet conditions are imposed by reducing to interior scalar nodes,
and the zero-mean pressure constraint is appended as a bordered
row/column with a scalar Lagrange multiplier.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


# --- quadrature on the reference triangle (vertices (0,0),(1,0),(0,1)) ---

def _orbit1(w):
    return [((1.0 / 3.0, 1.0 / 3.0), w)]


def _orbit21(a, w):
    return [((a, a), w), ((1.0 - 2.0 * a, a), w), ((a, 1.0 - 2.0 * a), w)]


def _orbit111(a, b, w):
    c = 1.0 - a - b
    pts = []
    for l1, l2, l3 in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
        pts.append(((l2, l3), w))
    return pts


def triangle_rule(degree):
    """Points and weights on the reference triangle; weights sum to 1/2."""
    s15 = np.sqrt(15.0)
    if degree == 5:
        data = (_orbit1(9.0 / 40.0)
                + _orbit21((6.0 + s15) / 21.0, (155.0 + s15) / 1200.0)
                + _orbit21((6.0 - s15) / 21.0, (155.0 - s15) / 1200.0))
    elif degree == 6:
        data = (_orbit21(0.063089014491502228, 0.050844906370206817)
                + _orbit21(0.24928674517091042, 0.11678627572637936)
                + _orbit111(0.053145049844816947, 0.31035245103378439,
                            0.082851075618373575))
    else:
        raise ValueError(f"no rule of degree {degree}")
    pts = np.array([p for p, _ in data])
    wts = 0.5 * np.array([w for _, w in data])
    return pts, wts


def p2_basis(points):
    """Quadratic basis values and reference gradients at given points."""
    xi, eta = points[:, 0], points[:, 1]
    l1, l2, l3 = 1.0 - xi - eta, xi, eta
    phi = np.stack([
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        l3 * (2.0 * l3 - 1.0),
        4.0 * l1 * l2,
        4.0 * l2 * l3,
        4.0 * l3 * l1,
    ], axis=1)  # (nq, 6)
    g1 = np.array([-1.0, -1.0])
    g2 = np.array([1.0, 0.0])
    g3 = np.array([0.0, 1.0])
    grad = np.empty((points.shape[0], 6, 2))
    grad[:, 0] = np.outer(4.0 * l1 - 1.0, g1)
    grad[:, 1] = np.outer(4.0 * l2 - 1.0, g2)
    grad[:, 2] = np.outer(4.0 * l3 - 1.0, g3)
    grad[:, 3] = 4.0 * (np.outer(l2, g1) + np.outer(l1, g2))
    grad[:, 4] = 4.0 * (np.outer(l3, g2) + np.outer(l2, g3))
    grad[:, 5] = 4.0 * (np.outer(l1, g3) + np.outer(l3, g1))
    return phi, grad


def p1_basis(points):
    xi, eta = points[:, 0], points[:, 1]
    psi = np.stack([1.0 - xi - eta, xi, eta], axis=1)  # (nq, 3)
    grad = np.broadcast_to(
        np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (points.shape[0], 3, 2))
    return psi, grad


class FemMesh2D:
    """Structured triangulation of a rectangle.

    Each of the ``Nx x Ny`` cells is split along its SW-NE diagonal into
    two counterclockwise triangles.
    """

    def __init__(self, bounds, nx, ny):
        x0, x1, y0, y1 = bounds
        if x1 <= x0 or y1 <= y0 or nx < 1 or ny < 1:
            raise ValueError("invalid rectangle or subdivision counts")
        self.bounds = (float(x0), float(x1), float(y0), float(y1))
        self.nx, self.ny = int(nx), int(ny)
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        self.vertices = np.column_stack([X.ravel(), Y.ravel()])

        def vid(ix, iy):
            return iy * (nx + 1) + ix

        tris = []
        for iy in range(ny):
            for ix in range(nx):
                v00, v10 = vid(ix, iy), vid(ix + 1, iy)
                v01, v11 = vid(ix, iy + 1), vid(ix + 1, iy + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        self.triangles = np.asarray(tris, dtype=np.int64)

        edge_ids = {}
        tri_edges = np.empty((len(tris), 3), dtype=np.int64)
        for e, (a, b, c) in enumerate(self.triangles):
            for slot, (p, q) in enumerate(((a, b), (b, c), (c, a))):
                key = (min(p, q), max(p, q))
                if key not in edge_ids:
                    edge_ids[key] = len(edge_ids)
                tri_edges[e, slot] = edge_ids[key]
        self.tri_edges = tri_edges
        self.edges = np.array(sorted(edge_ids, key=edge_ids.get), dtype=np.int64)
        self.num_vertices = self.vertices.shape[0]
        self.num_edges = self.edges.shape[0]
        self.num_triangles = self.triangles.shape[0]

    def on_boundary(self, coords):
        x0, x1, y0, y1 = self.bounds
        x, y = coords[:, 0], coords[:, 1]
        return (x == x0) | (x == x1) | (y == y0) | (y == y1)


class TaylorHoodSpace:
    """P2 velocity / P1 pressure space with precomputed element data."""

    def __init__(self, mesh):
        self.mesh = mesh
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        self.scalar_coords = np.vstack([mesh.vertices, mids])
        self.num_scalar = mesh.num_vertices + mesh.num_edges
        self.num_velocity = 2 * self.num_scalar
        self.num_pressure = mesh.num_vertices

        self.tri_scalar = np.hstack([mesh.triangles, mesh.num_vertices + mesh.tri_edges])
        self.tri_pressure = mesh.triangles

        self.boundary_scalar = np.flatnonzero(mesh.on_boundary(self.scalar_coords))
        mask = np.ones(self.num_scalar, dtype=bool)
        mask[self.boundary_scalar] = False
        self.interior_scalar = np.flatnonzero(mask)
        self.interior_velocity = np.concatenate(
            [self.interior_scalar, self.num_scalar + self.interior_scalar])
        self.boundary_velocity = np.concatenate(
            [self.boundary_scalar, self.num_scalar + self.boundary_scalar])

        v = mesh.vertices[mesh.triangles]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # (nt,2,2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        bad = np.flatnonzero(det <= 0.0)
        if bad.size:
            raise AssemblyError(f"element {bad[0]} has nonpositive Jacobian determinant")
        inv_jt = np.empty_like(jac)
        inv_jt[:, 0, 0] = jac[:, 1, 1]
        inv_jt[:, 0, 1] = -jac[:, 1, 0]
        inv_jt[:, 1, 0] = -jac[:, 0, 1]
        inv_jt[:, 1, 1] = jac[:, 0, 0]
        inv_jt /= det[:, None, None]
        self.det = det
        self._jac = jac
        self._v0 = v[:, 0]

        self.qp, self.qw = triangle_rule(5)
        self.phi2, grad2_ref = p2_basis(self.qp)
        self.psi1, _ = p1_basis(self.qp)
        # physical gradients: (nt, nq, 6, 2)
        self.grad2 = np.einsum("eab,qib->eqia", inv_jt, grad2_ref)

        self.qp6, self.qw6 = triangle_rule(6)
        self.phi2_6, grad2_ref6 = p2_basis(self.qp6)
        self.psi1_6, _ = p1_basis(self.qp6)
        self.grad2_6 = np.einsum("eab,qib->eqia", inv_jt, grad2_ref6)

        self._cache = {}

    def quad_points_physical(self, degree=6):
        """Physical coordinates of the quadrature points, shape (nt, nq, 2)."""
        qp = self.qp6 if degree == 6 else self.qp
        return self._v0[:, None, :] + np.einsum("eab,qb->eqa", self._jac, qp)

    # --- assembly ------------------------------------------------------

    def _scatter(self, local, rows_map, cols_map, shape):
        nt, a, b = local.shape
        rows = np.broadcast_to(rows_map[:, :, None], (nt, a, b)).ravel()
        cols = np.broadcast_to(cols_map[:, None, :], (nt, a, b)).ravel()
        mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    @staticmethod
    def _symmetrize(local):
        # enforce exact symmetry of symmetric forms (independent of the
        # floating-point association order inside the contraction)
        return 0.5 * (local + np.swapaxes(local, -1, -2))

    def _scalar_mass_local(self):
        m = np.einsum("q,qi,qj->ij", self.qw, self.phi2, self.phi2)
        return self.det[:, None, None] * self._symmetrize(m)

    def _scalar_stiffness_local(self):
        k = np.einsum("q,eqia,eqja->eij", self.qw, self.grad2, self.grad2)
        return self.det[:, None, None] * self._symmetrize(k)

    def _p1_mass_local(self):
        m = np.einsum("q,qi,qj->ij", self.qw, self.psi1, self.psi1)
        return self.det[:, None, None] * self._symmetrize(m)

    def _assemble_scalar(self, kind):
        if kind == "mass":
            local = self._scalar_mass_local()
        elif kind == "stiffness":
            local = self._scalar_stiffness_local()
        else:
            raise ValueError(kind)
        n = self.num_scalar
        return self._scatter(local, self.tri_scalar, self.tri_scalar, (n, n))

    @property
    def scalar_mass(self):
        if "Ms" not in self._cache:
            self._cache["Ms"] = self._assemble_scalar("mass")
        return self._cache["Ms"]

    @property
    def scalar_stiffness(self):
        if "As" not in self._cache:
            self._cache["As"] = self._assemble_scalar("stiffness")
        return self._cache["As"]

    @property
    def mass(self):
        if "M" not in self._cache:
            self._cache["M"] = sp.block_diag(
                [self.scalar_mass, self.scalar_mass], format="csr")
        return self._cache["M"]

    @property
    def stiffness(self):
        if "A" not in self._cache:
            self._cache["A"] = sp.block_diag(
                [self.scalar_stiffness, self.scalar_stiffness], format="csr")
        return self._cache["A"]

    @property
    def divergence(self):
        """(B U)_q = integral of q_h div u_h; shape (n_pressure, n_velocity)."""
        if "B" not in self._cache:
            n_p, n_s = self.num_pressure, self.num_scalar
            bx = np.einsum("q,qm,eqj->emj", self.qw, self.psi1, self.grad2[..., 0])
            by = np.einsum("q,qm,eqj->emj", self.qw, self.psi1, self.grad2[..., 1])
            bx = self._scatter(self.det[:, None, None] * bx,
                               self.tri_pressure, self.tri_scalar, (n_p, n_s))
            by = self._scatter(self.det[:, None, None] * by,
                               self.tri_pressure, self.tri_scalar, (n_p, n_s))
            self._cache["B"] = sp.hstack([bx, by], format="csr")
        return self._cache["B"]

    @property
    def pressure_mass(self):
        if "Mp" not in self._cache:
            n_p = self.num_pressure
            self._cache["Mp"] = self._scatter(
                self._p1_mass_local(), self.tri_pressure, self.tri_pressure, (n_p, n_p))
        return self._cache["Mp"]

    @property
    def mean_vector(self):
        """Vector c with c_q = integral of the pressure basis function q."""
        if "c" not in self._cache:
            loc = self.det[:, None] * np.einsum("q,qm->m", self.qw, self.psi1)
            c = np.zeros(self.num_pressure)
            np.add.at(c, self.tri_pressure.ravel(),
                      np.broadcast_to(loc, self.tri_pressure.shape).ravel())
            self._cache["c"] = c
        return self._cache["c"]

    def velocity_at_quadrature(self, w):
        """Velocity field values at the assembly quadrature points, (nt, nq, 2)."""
        wx = w[: self.num_scalar][self.tri_scalar]
        wy = w[self.num_scalar:][self.tri_scalar]
        vx = np.einsum("ej,qj->eq", wx, self.phi2)
        vy = np.einsum("ej,qj->eq", wy, self.phi2)
        return np.stack([vx, vy], axis=-1)

    def convection(self, w):
        """C(w) with (C(w) U) . v = integral (w_h . grad u_h) . v_h (plain form)."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.num_velocity,):
            raise ValueError("velocity coefficient vector of wrong length")
        wq = self.velocity_at_quadrature(w)
        wd = np.einsum("eqa,eqja->eqj", wq, self.grad2)
        local = self.det[:, None, None] * np.einsum("q,qi,eqj->eij", self.qw, self.phi2, wd)
        n = self.num_scalar
        cs = self._scatter(local, self.tri_scalar, self.tri_scalar, (n, n))
        return sp.block_diag([cs, cs], format="csr")

    def convection_apply(self, w, u):
        """Matrix-free evaluation of the convection term against all tests.

        Returns the vector with entries ``integral (w_h . grad u_h) . v_i``;
        equivalent to ``convection(w) @ u`` without building the matrix.
        """
        wq = self.velocity_at_quadrature(w)
        n = self.num_scalar
        out = np.zeros(self.num_velocity)
        for comp in (0, 1):
            uc = u[comp * n:(comp + 1) * n][self.tri_scalar]
            grad_uc = np.einsum("ej,eqja->eqa", uc, self.grad2)
            conv = np.einsum("eqa,eqa->eq", wq, grad_uc)
            loc = self.det[:, None] * np.einsum("q,eq,qi->ei", self.qw, conv, self.phi2)
            np.add.at(out, comp * n + self.tri_scalar.ravel(), loc.ravel())
        return out

    def convection_gradient(self, w):
        """G(w) with (G(w) U') . v = integral (u'_h . grad w_h) . v_h.

        Together with ``convection`` this is the full linearization of the
        quadratic convection term.
        """
        w = np.asarray(w, dtype=float)
        if w.shape != (self.num_velocity,):
            raise ValueError("velocity coefficient vector of wrong length")
        n = self.num_scalar
        blocks = [[None, None], [None, None]]
        comps = (w[:n][self.tri_scalar], w[n:][self.tri_scalar])
        for c in (0, 1):
            for d in (0, 1):
                dwc = np.einsum("ej,eqj->eq", comps[c], self.grad2[..., d])
                local = self.det[:, None, None] * np.einsum(
                    "q,qi,qj,eq->eij", self.qw, self.phi2, self.phi2, dwc)
                blocks[c][d] = self._scatter(local, self.tri_scalar, self.tri_scalar, (n, n))
        return sp.bmat(blocks, format="csr")

    def velocity_load(self, f):
        """Load vector of a velocity-valued function (degree-6 rule).

        ``f(x, y)`` must accept numpy arrays and return the pair of
        component arrays.
        """
        coords = self.quad_points_physical(6)
        fx, fy = f(coords[..., 0], coords[..., 1])
        out = np.zeros(self.num_velocity)
        for comp, vals in enumerate((fx, fy)):
            loc = self.det[:, None] * np.einsum("q,eq,qi->ei", self.qw6, vals, self.phi2_6)
            np.add.at(out, comp * self.num_scalar + self.tri_scalar.ravel(), loc.ravel())
        return out

    def interpolate_velocity(self, f):
        """Nodal interpolant coefficients of a velocity field."""
        x, y = self.scalar_coords[:, 0], self.scalar_coords[:, 1]
        fx, fy = f(x, y)
        return np.concatenate([np.asarray(fx, dtype=float), np.asarray(fy, dtype=float)])

    def interpolate_pressure(self, f):
        x, y = self.mesh.vertices[:, 0], self.mesh.vertices[:, 1]
        return np.asarray(f(x, y), dtype=float)

    def velocity_l2_error(self, u, f):
        """Quadrature L2 distance between discrete u and a callable field."""
        coords = self.quad_points_physical(6)
        fx, fy = f(coords[..., 0], coords[..., 1])
        ux = np.einsum("ej,qj->eq", u[: self.num_scalar][self.tri_scalar], self.phi2_6)
        uy = np.einsum("ej,qj->eq", u[self.num_scalar:][self.tri_scalar], self.phi2_6)
        err2 = (ux - fx) ** 2 + (uy - fy) ** 2
        return float(np.sqrt(np.sum(self.det * np.einsum("q,eq->e", self.qw6, err2))))

    def pressure_l2_error(self, p, f):
        coords = self.quad_points_physical(6)
        fv = f(coords[..., 0], coords[..., 1])
        pv = np.einsum("ej,qj->eq", p[self.tri_pressure], self.psi1_6)
        return float(np.sqrt(np.sum(self.det * np.einsum("q,eq->e", self.qw6, (pv - fv) ** 2))))

    def h2_proxy_seminorm(self, d):
        """Discrete H2-proxy: stiffness seminorm of the recovered gradient.

        The gradient of each velocity component is L2-projected back onto
        the quadratic space and measured in the stiffness seminorm.  This
        is a proxy (exact second-order norms are not available in
        H1-conforming elements) and is documented as such.
        """
        if "h2ops" not in self._cache:
            n = self.num_scalar
            dx = np.einsum("q,qi,eqj->eij", self.qw, self.phi2, self.grad2[..., 0])
            dy = np.einsum("q,qi,eqj->eij", self.qw, self.phi2, self.grad2[..., 1])
            dx = self._scatter(self.det[:, None, None] * dx, self.tri_scalar,
                               self.tri_scalar, (n, n))
            dy = self._scatter(self.det[:, None, None] * dy, self.tri_scalar,
                               self.tri_scalar, (n, n))
            self._cache["h2ops"] = (splu(self.scalar_mass.tocsc()), dx, dy,
                                    self.scalar_stiffness)
        lu, dx, dy, As = self._cache["h2ops"]
        acc = 0.0
        for comp in (d[: self.num_scalar], d[self.num_scalar:]):
            for D in (dx, dy):
                g = lu.solve(D @ comp)
                acc += float(g @ (As @ g))
        return float(np.sqrt(acc))


def build_space(bounds, nx, ny):
    return TaylorHoodSpace(FemMesh2D(bounds, nx, ny))


@dataclass
class MixedState:
    """Velocity and (zero-mean) pressure coefficients plus the multiplier."""

    velocity: np.ndarray
    pressure: np.ndarray
    multiplier: float = 0.0


class BorderedSaddle:
    """Direct factorization of one constrained saddle-point system.

    Solves, reduced to interior velocity nodes and bordered with the
    zero-mean pressure constraint,

        K U - B^T P = F
        B U + c lam = g
        c . P       = 0.

    The factorization is reused across right-hand sides, which is what
    the time steppers rely on when the step size repeats.
    """

    def __init__(self, space, K, B=None):
        self.space = space
        if B is None:
            B = space.divergence
        ii = space.interior_velocity
        self.K_ii = K[ii][:, ii].tocsr()
        self.B_i = B[:, ii].tocsr()
        c = space.mean_vector
        n_i, n_p = ii.size, space.num_pressure
        c_col = sp.csr_matrix((c, (np.arange(n_p), np.zeros(n_p, dtype=int))),
                              shape=(n_p, 1))
        system = sp.bmat([
            [self.K_ii, -self.B_i.T, None],
            [self.B_i, None, c_col],
            [None, c_col.T, None],
        ], format="csc")
        try:
            self.lu = splu(system)
        except RuntimeError as exc:
            raise SolverError(f"saddle-point factorization failed: {exc}") from None
        self.system = system
        self.n_i, self.n_p = n_i, n_p

    def solve(self, F, g=None, rtol=1e-10):
        space = self.space
        F = np.asarray(F, dtype=float)
        rhs = np.zeros(self.n_i + self.n_p + 1)
        rhs[: self.n_i] = F[space.interior_velocity]
        if g is not None:
            rhs[self.n_i: self.n_i + self.n_p] = g
        x = self.lu.solve(rhs)
        scale = max(float(np.linalg.norm(rhs)), 1e-30)
        resid = float(np.linalg.norm(self.system @ x - rhs))
        if not np.isfinite(resid) or resid > rtol * scale:
            raise SolverError(
                f"saddle-point solve residual {resid:.3e} above {rtol:.1e} * {scale:.3e}")
        U = np.zeros(space.num_velocity)
        U[space.interior_velocity] = x[: self.n_i]
        P = x[self.n_i: self.n_i + self.n_p]
        mean = abs(float(space.mean_vector @ P))
        if mean > 1e-10 * max(1.0, float(np.linalg.norm(P))):
            raise SolverError(f"pressure mean {mean:.3e} above tolerance")
        return MixedState(U, P, float(x[-1]))


def solve_saddle_point(space, K, F, B=None, g=None, rtol=1e-10):
    """One-shot constrained saddle solve (factorization not retained)."""
    return BorderedSaddle(space, K, B).solve(F, g, rtol)


def dump_triplets(matrix, path):
    """Write a sparse matrix as ``row col value`` lines (debugging format)."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def dump_vector(vec, path):
    """Write a coefficient vector as ``index value`` lines."""
    vec = np.asarray(vec)
    with open(path, "w") as fh:
        fh.write(f"# {vec.size}\n")
        for i, v in enumerate(vec):
            fh.write(f"{i} {float(v)!r}\n")
