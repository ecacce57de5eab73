"""Cartesian grids, the flux operator, interpolation and ball/sphere quadrature."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates

from .errors import ConfigError, GeometryError, PreconditionError, SingularityError
from .fields import LiftedSpec


@dataclass(frozen=True)
class Grid:
    dim: int
    half_width: float
    h: float

    def __post_init__(self):
        q = self.half_width / self.h
        if self.h <= 0 or abs(q - round(q)) > 1e-9 * max(1.0, q):
            raise ValueError(f"h={self.h} must divide the half width {self.half_width}")
        if self.dim not in (2, 3):
            raise ValueError("grid dimension must be 2 or 3")

    @property
    def n(self):
        return 2 * int(round(self.half_width / self.h)) + 1

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def axis(self):
        m = int(round(self.half_width / self.h))
        return np.arange(-m, m + 1) * self.h

    def nodes(self):
        return np.stack(np.meshgrid(*([self.axis] * self.dim), indexing="ij"), axis=-1)

    def interior_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        m[(slice(1, -1),) * self.dim] = True
        return m

    def as_dict(self):
        return {"dim": self.dim, "half_width": self.half_width, "h": self.h, "n_per_axis": self.n}


@dataclass(eq=False)
class GridField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")


def check_exponent(gamma, dim):
    if gamma < 1:
        raise ConfigError(f"gamma={gamma} must be >= 1")
    if gamma * dim / (gamma + 1) >= 2:
        raise ConfigError(f"gamma*N/(gamma+1) = {gamma * dim / (gamma + 1):.3f} must be < 2 "
                          "(subcritical coupling restriction)")


@dataclass(eq=False)
class GridState:
    """l scalar fields on a grid, with the (gamma, beta) and coefficients they solve.

    check=False skips the positivity and l >= 2 requirements, which is what the
    analytic probes (signed harmonics, single components) need.
    """

    grid: Grid
    values: np.ndarray
    spec: object
    gamma: float = 1.0
    beta: float = 0.0
    check: bool = True
    extruded: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == self.grid.dim:
            v = v[None]
        self.values = v
        if v.shape[1:] != self.grid.shape:
            raise ValueError(f"state shape {v.shape[1:]} does not match grid {self.grid.shape}")
        if self.spec.dim != self.grid.dim:
            raise ValueError("spec and grid dimensions differ")
        check_exponent(self.gamma, self.grid.dim)
        if not self.extruded and not np.all(np.isfinite(v)):
            raise ValueError("state contains non-finite values")
        if self.check:
            if v.shape[0] < 2:
                raise PreconditionError("a competitive state needs at least two components")
            if np.any(v < 0):
                raise PreconditionError("state components must be nonnegative")

    @property
    def dim(self):
        return self.grid.dim

    @property
    def ncomp(self):
        return self.values.shape[0]

    def field(self, i):
        return GridField(self.grid, self.values[i])

    def with_values(self, values, **kw):
        opts = dict(grid=self.grid, spec=self.spec, gamma=self.gamma, beta=self.beta, check=self.check)
        opts.update(kw)
        return GridState(values=values, **opts)


def lift_state(state):
    """Constant extension in x3 of a 2D state; the values are a zero-copy view."""
    if state.dim != 2:
        raise ValueError("only 2D states can be lifted")
    g = Grid(3, state.grid.half_width, state.grid.h)
    v = np.broadcast_to(state.values[..., None], state.values.shape + (g.n,))
    return GridState(g, v, LiftedSpec(state.spec), state.gamma, state.beta, check=False, extruded=True)


# ---------------------------------------------------------------- operator

def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


def _diff1(n):
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _avg1(n):
    return sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def _mesh(*axes):
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def stiffness_matrix(grid, spec):
    """Sparse K with 0.5 u.K.u the trapezoid-weighted discrete energy of -div(A grad u).

    Diagonal coefficients act on face differences with A at face midpoints,
    cross terms on cell-centred averaged differences with A at cell centres.
    (K u)/h^N approximates -div(A grad u) at interior nodes.
    """
    N, n, h = grid.dim, grid.n, grid.h
    x = grid.axis
    xm = 0.5 * (x[:-1] + x[1:])
    trap = np.ones(n)
    trap[[0, -1]] = 0.5
    scale = h ** (N - 2)
    K = sp.csr_matrix((n**N, n**N))
    I = sp.identity(n, format="csr")
    for k in range(N):
        axes = [xm if m == k else x for m in range(N)]
        A = spec.matrix(_mesh(*axes))[..., k, k]
        w = np.ones(A.shape)
        for m in range(N):
            if m != k:
                sh = [1] * N
                sh[m] = n
                w = w * trap.reshape(sh)
        D = _kron_all([_diff1(n) if m == k else I for m in range(N)])
        K = K + D.T @ sp.diags((A * w).ravel() * scale) @ D
    A_cell = spec.matrix(_mesh(*([xm] * N)))
    if np.any(A_cell[..., ~np.eye(N, dtype=bool)] != 0):
        C = [_kron_all([_diff1(n) if m == k else _avg1(n) for m in range(N)]) for k in range(N)]
        for k in range(N):
            for l in range(N):
                if k != l:
                    K = K + C[k].T @ sp.diags(A_cell[..., k, l].ravel() * scale) @ C[l]
    return sp.csr_matrix(K)


def apply_operator(u, spec):
    """Discrete -div(A grad u) at interior nodes; boundary entries are zero."""
    g = u.grid
    K = stiffness_matrix(g, spec)
    out = (K @ u.values.ravel()).reshape(g.shape) / g.h**g.dim
    out[~g.interior_mask()] = 0.0
    return GridField(g, out)


def gradient(u):
    """Centred differences inside, one-sided on the boundary; shape (N,) + grid shape."""
    g = np.gradient(u.values, u.grid.h, edge_order=1)
    return np.stack(g if isinstance(g, (list, tuple)) else [g])


# ---------------------------------------------------------------- interpolation

def require_inside(grid, points, dim=None):
    dim = dim or grid.dim
    lim = grid.half_width - grid.h
    p = np.asarray(points)[..., :dim]
    if np.any(np.abs(p) > lim * (1 + 1e-12)):
        raise GeometryError(f"sample points leave the grid box minus one cell (|x|_inf <= {lim:.4g})")


def interpolate(grid, values, points):
    """Multilinear interpolation of a nodal array at points (..., N)."""
    pts = np.asarray(points, dtype=float)
    require_inside(grid, pts)
    c = (pts.reshape(-1, grid.dim) + grid.half_width) / grid.h
    out = map_coordinates(values, c.T, order=1, mode="nearest", prefilter=False)
    return out.reshape(pts.shape[:-1])


def sphere_trace(u, quad):
    return interpolate(u.grid, u.values, quad.nodes)


def tangential_split(grad, y):
    grad = np.asarray(grad, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1)
    if np.any(r == 0):
        raise SingularityError("tangential split undefined at the origin")
    nu = y / r[..., None]
    normal = np.einsum("...k,...k->...", grad, nu)
    tang = grad - normal[..., None] * nu
    return normal, tang


class FieldSampler:
    """Point evaluation of a state's components, gradients and energy densities.

    Extruded (lifted) states are sampled through their 2D base arrays.
    """

    def __init__(self, state):
        self.state = state
        self.dim = state.dim
        if state.extruded:
            self.pgrid = Grid(2, state.grid.half_width, state.grid.h)
            self.arrays = np.ascontiguousarray(state.values[..., 0])
        else:
            self.pgrid = state.grid
            self.arrays = state.values
        self._grad = {}
        self._stag = {}

    def _coords(self, pts):
        pts = np.asarray(pts, dtype=float)
        require_inside(self.pgrid, pts, self.pgrid.dim)
        return ((pts[..., : self.pgrid.dim].reshape(-1, self.pgrid.dim) + self.pgrid.half_width) / self.pgrid.h).T

    def _interp(self, arr, c):
        return map_coordinates(arr, c, order=1, mode="nearest", prefilter=False)

    def centred(self, i):
        if i not in self._grad:
            self._grad[i] = gradient(GridField(self.pgrid, self.arrays[i]))
        return self._grad[i]

    def staggered(self, i):
        if i not in self._stag:
            u = self.arrays[i]
            self._stag[i] = [np.diff(u, axis=k) / self.pgrid.h for k in range(self.pgrid.dim)]
        return self._stag[i]

    def values(self, pts, comps=None):
        comps = range(self.state.ncomp) if comps is None else comps
        c = self._coords(pts)
        shape = np.shape(pts)[:-1]
        return np.stack([self._interp(self.arrays[i], c).reshape(shape) for i in comps])

    def gradients(self, pts, comps=None):
        comps = range(self.state.ncomp) if comps is None else comps
        c = self._coords(pts)
        shape = np.shape(pts)[:-1]
        out = np.zeros((len(comps),) + shape + (self.dim,))
        for a, i in enumerate(comps):
            G = self.centred(i)
            for k in range(self.pgrid.dim):
                out[a, ..., k] = self._interp(G[k], c).reshape(shape)
        return out

    def _face_derivative(self, D, c, k):
        # D lives on faces j + 1/2 along axis k. Reconstruct the derivative
        # linearly from the cell's own face and the smoother neighbour (ENO).
        nf = D.shape[k]
        f0 = np.clip(np.floor(c[k]), 0, nf - 1)
        s = c[k] - (f0 + 0.5)
        cc = c.copy()
        vals = []
        for off in (-1, 0, 1):
            cc[k] = np.clip(f0 + off, 0, nf - 1)
            vals.append(self._interp(D, cc))
        am, a0, ap = vals
        left = np.abs(a0 - am)
        right = np.abs(ap - a0)
        use_left = ((left <= right) & (f0 > 0)) | (f0 >= nf - 1)
        slope = np.where(use_left, a0 - am, ap - a0)
        return a0 + s * slope

    def eno_gradients(self, pts, comps=None):
        """Gradients from the ENO face reconstruction (exact across kinks on grid planes)."""
        comps = range(self.state.ncomp) if comps is None else comps
        c = self._coords(pts)
        shape = np.shape(pts)[:-1]
        out = np.zeros((len(comps),) + shape + (self.dim,))
        for a, i in enumerate(comps):
            S = self.staggered(i)
            for k in range(self.pgrid.dim):
                out[a, ..., k] = self._face_derivative(S[k], c, k).reshape(shape)
        return out

    def energy_density(self, pts, A, comps=None):
        """<A grad u_i, grad u_i> at points.

        Diagonal terms use the ENO face reconstruction, which is exact for
        quadratic fields and for kinks on grid planes; cross terms use the
        interpolated centred gradient.
        """
        comps = range(self.state.ncomp) if comps is None else comps
        c = self._coords(pts)
        shape = np.shape(pts)[:-1]
        pd = self.pgrid.dim
        A = np.asarray(A).reshape((-1, self.dim, self.dim))
        out = np.zeros((len(comps), c.shape[1]))
        offdiag = np.any(A[:, :pd, :pd][:, ~np.eye(pd, dtype=bool)] != 0)
        for a, i in enumerate(comps):
            S = self.staggered(i)
            for k in range(pd):
                out[a] += A[:, k, k] * self._face_derivative(S[k], c, k) ** 2
            if offdiag:
                G = self.centred(i)
                g = [self._interp(G[k], c) for k in range(pd)]
                for k in range(pd):
                    for l in range(k + 1, pd):
                        out[a] += 2 * A[:, k, l] * g[k] * g[l]
        return out.reshape((len(comps),) + shape)


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    dim: int
    r: float
    nodes: np.ndarray
    weights: np.ndarray
    directions: np.ndarray
    degree: int


@lru_cache(maxsize=16)
def _unit_sphere(dim, n):
    # half-step offset: no node lies on a coordinate plane, where one-signed
    # fields such as x1^+ have a jump in their tangential energy
    if dim == 2:
        t = 2 * np.pi * (np.arange(n) + 0.5) / n
        dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
        w = np.full(n, 2 * np.pi / n)
        return dirs, w, n - 1
    ct, wt = np.polynomial.legendre.leggauss(n)
    naz = 2 * n
    ph = 2 * np.pi * (np.arange(naz) + 0.5) / naz
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([np.outer(st, np.cos(ph)), np.outer(st, np.sin(ph)), np.outer(ct, np.ones(naz))], axis=-1)
    w = np.outer(wt, np.full(naz, 2 * np.pi / naz))
    return dirs.reshape(-1, 3), w.ravel(), min(2 * n - 1, naz - 1)


def default_angular(dim):
    return 256 if dim == 2 else 48


def sphere_quadrature(dim, r, n=None):
    """Uniform angles (2D, n >= 256) or Gauss-Legendre polar x uniform azimuth (3D, n >= 48).

    Exact for trigonometric modes |m| <= n-1 in 2D and for polynomials of degree
    <= 2n-1 in 3D; the node set is symmetric under every coordinate reflection.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    n = n or default_angular(dim)
    dirs, w, deg = _unit_sphere(dim, n)
    return SphereQuadrature(dim, float(r), r * dirs, w * r ** (dim - 1), dirs, deg)


def surface_integral(samples, quad):
    return np.asarray(samples) @ quad.weights


def surface_area(dim, r):
    return (2 * np.pi * r) if dim == 2 else 4 * np.pi * r**2


def radial_rule(radii, h, order=3):
    """Composite Gauss-Legendre in rho on [0, r_K] with breakpoints at the radii.

    Returns nodes, weights and, for each node, the index of the first radius at
    or beyond it, so cumulative sums give all ball integrals at once.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise ValueError("radii must be positive and increasing")
    xg, wg = np.polynomial.legendre.leggauss(order)
    nodes, weights, seg = [], [], []
    lo = 0.0
    for k, hi in enumerate(radii):
        npan = max(1, int(np.ceil((hi - lo) / h - 1e-9)))
        edges = np.linspace(lo, hi, npan + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
            weights.append(0.5 * (b - a) * wg)
            seg.append(np.full(order, k))
        lo = hi
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(seg)


def ball_integrals(integrand, dim, radii, h, n_ang=None, chunk=250_000):
    """Cumulative integrals of integrand over the balls B_r for every r in radii.

    integrand(points) takes (P, N) points and returns (k, P) or (P,) values.
    """
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    rho, wr, seg = radial_rule(radii, h)
    dirs, wang, _ = _unit_sphere(dim, n_ang or default_angular(dim))
    per = max(1, chunk // len(wang))
    shell = None
    for s in range(0, len(rho), per):
        rr = rho[s:s + per]
        pts = (rr[:, None, None] * dirs[None]).reshape(-1, dim)
        vals = np.asarray(integrand(pts))
        squeeze = vals.ndim == 1
        vals = np.atleast_2d(vals).reshape(vals.shape[0] if not squeeze else 1, len(rr), len(wang))
        part = vals @ wang * (wr[s:s + per] * rr ** (dim - 1))
        shell = part if shell is None else np.concatenate([shell, part], axis=1)
    by_seg = np.zeros((shell.shape[0], len(radii)))
    for k in range(len(radii)):
        by_seg[:, k] = shell[:, seg == k].sum(axis=1)
    out = np.cumsum(by_seg, axis=1)
    return out[0] if squeeze else out


def volume_integral(f, r, n_ang=None):
    """Integral of a GridField (or callable) over B_r by polar quadrature."""
    if callable(f):
        raise TypeError("pass a GridField; use ball_integrals for callables")
    require_inside(f.grid, np.full((1, f.grid.dim), r))
    return float(ball_integrals(lambda p: interpolate(f.grid, f.values, p), f.grid.dim, [r], f.grid.h, n_ang)[0])


def smoothed_indicator(dist, r, width):
    """C^1 cubic step: 1 inside B_{r-width/2}, 0 outside B_{r+width/2}."""
    s = np.clip((r - dist) / (0.5 * width), -1.0, 1.0)
    return 0.5 + 0.75 * s - 0.25 * s**3


def lattice_volume_integral(f, r, singular_power=None):
    """Nodal sum of f over B_r with a smoothed indicator of width 2h.

    With singular_power p the weight |x|^p is included; the origin cell is
    excised and replaced by the integral over the ball of equal volume.
    """
    g = f.grid
    if r + g.h > g.half_width - g.h:
        raise GeometryError("ball does not fit in the grid box minus one cell")
    X = g.nodes()
    d = np.linalg.norm(X, axis=-1)
    w = smoothed_indicator(d, r, 2 * g.h) * g.h**g.dim
    vals = f.values
    if singular_power is None:
        return float(np.sum(w * vals))
    with np.errstate(divide="ignore"):
        weight = np.where(d > 0, d ** singular_power, 0.0)
    total = np.sum(w * vals * weight)
    vol = g.h**g.dim
    unit_area = surface_area(g.dim, 1.0)
    rc = (vol * g.dim / unit_area) ** (1.0 / g.dim)
    centre = vals[(g.n // 2,) * g.dim]
    total += centre * unit_area * rc ** (g.dim + singular_power) / (g.dim + singular_power)
    return float(total)


def random_smooth_field(dim, rng, modes=4, scale=2.0):
    """Random trigonometric field u(x) = sum c_k cos(<w_k, x> + p_k) and its gradient."""
    c = rng.normal(size=modes)
    w = rng.normal(scale=scale, size=(modes, dim))
    p = rng.uniform(0, 2 * np.pi, size=modes)
    off = rng.normal()

    def u(x):
        return np.cos(x @ w.T + p) @ c + off

    def grad(x):
        return -(np.sin(x @ w.T + p) * c) @ w

    return u, grad


def poincare_gap(u, grad, dim, r, h=None, n_ang=None):
    """LHS - RHS of r^{2-N} int|grad u|^2 + r^{1-N} int_{dB_r} u^2 >= (N-1) r^{-N} int_{B_r} u^2.

    Returns (gap, scale) with scale the largest of the three terms.
    """
    h = r / 16 if h is None else h
    vol = ball_integrals(lambda p: np.stack([(grad(p) ** 2).sum(axis=1), u(p) ** 2]), dim, [r], h, n_ang)[:, 0]
    q = sphere_quadrature(dim, r, n_ang)
    t1 = vol[0] * r ** (2 - dim)
    t2 = (u(q.nodes) ** 2) @ q.weights * r ** (1 - dim)
    t3 = (dim - 1) * vol[1] * r ** (-dim)
    return float(t1 + t2 - t3), float(max(t1, t2, t3))


def poincare_check(count=100, seed=0, dims=(2, 3), radii=(0.5, 1.0)):
    """Minimum normalised slack of the Poincare-type inequality over seeded random fields."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(count):
        for dim in dims:
            u, g = random_smooth_field(dim, rng)
            for r in radii:
                gap, scale = poincare_gap(u, g, dim, r, n_ang=None if dim == 2 else 24)
                worst = min(worst, gap / scale)
    return worst
