"""Straightening, blowup and blowdown frames, seminorm estimators and segregation diagnostics."""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import minimize

from .almgren import compute_H
from .errors import DegenerateError, GeometryError
from .fields import FramedSpec, matrix_sqrt, sample_points
from .grid import FieldSampler, Grid, ball_integrals, gradient, GridField


# ---------------------------------------------------------------- cutoff

def cutoff(x, inner=1.0, outer=2.0):
    """Radial quintic step: 1 on B_inner, 0 off B_outer, C^2 at both seams."""
    t = np.clip((np.linalg.norm(x, axis=-1) - inner) / (outer - inner), 0.0, 1.0)
    return 1 - t**3 * (10 - 15 * t + 6 * t**2)


def cutoff_gradient(x, inner=1.0, outer=2.0):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    t = np.clip((r - inner) / (outer - inner), 0.0, 1.0)
    dq = -30 * t**2 * (1 - t) ** 2 / (outer - inner)
    with np.errstate(invalid="ignore", divide="ignore"):
        nu = np.where(r[..., None] > 0, x / r[..., None], 0.0)
    return dq[..., None] * nu


# ---------------------------------------------------------------- straightening

def _fit_halfwidth(grid, x0, S):
    """Largest multiple of h whose box maps inside the source box under x -> x0 + S x."""
    reach = np.abs(S).sum(axis=1)
    room = grid.half_width - np.abs(x0)
    lim = np.min(room / reach)
    k = int(np.floor(lim / grid.h + 1e-9))
    if k < 2:
        raise GeometryError("straightened box does not fit in the grid")
    return k * grid.h


def _resample(state, grid, to_src):
    """Multilinear resampling of every component at the images of the new grid nodes."""
    src = state.grid
    X = grid.nodes().reshape(-1, grid.dim)
    c = ((to_src(X) + src.half_width) / src.h).T
    vals = np.stack([map_coordinates(u, c, order=1, mode="nearest", prefilter=False) for u in state.values])
    return vals.reshape((state.ncomp,) + grid.shape)


def interpolation_error(state):
    """h^2/8 times the largest second difference: a bound for multilinear resampling error."""
    h = state.grid.h
    worst = 0.0
    for u in state.values:
        for k in range(state.dim):
            d2 = np.abs(np.diff(u, 2, axis=k)) / h**2
            worst = max(worst, float(d2.max()) if d2.size else 0.0)
    return worst * h**2 / 8


def straighten(state, x0):
    """Pull back to the frame x -> x0 + A(x0)^{1/2} x, where the matrix is the identity at 0.

    Returns the new state (on a fresh grid with the same h) and its spec.
    Node-aligned centres with A(x0) = Id are an exact index shift.
    """
    x0 = np.asarray(x0, dtype=float)
    g = state.grid
    if np.any(np.abs(x0) > g.half_width - g.h):
        raise GeometryError("centre is not an interior node region")
    A0 = state.spec.matrix(x0)
    S = matrix_sqrt(A0)
    Sinv = np.linalg.inv(S)
    Sinv = 0.5 * (Sinv + Sinv.T)
    Lp = _fit_halfwidth(g, x0, S)
    new = Grid(g.dim, Lp, g.h)
    spec = FramedSpec(state.spec, x0, S, Sinv)
    idx = (x0 + g.half_width) / g.h
    if np.allclose(A0, np.eye(g.dim), rtol=0, atol=1e-15) and np.allclose(idx, np.round(idx), rtol=0, atol=1e-9):
        i0 = np.round(idx).astype(int)
        k = int(round(Lp / g.h))
        sl = tuple(slice(i - k, i + k + 1) for i in i0)
        vals = np.array(state.values[(slice(None),) + sl])
        err = 0.0
    else:
        vals = _resample(state, new, lambda X: x0 + X @ S.T)
        err = interpolation_error(state)
    out = state.with_values(vals, grid=new, spec=spec)
    out.interp_error = err
    return out, spec


def two_phase_point(state, pair=(0, 1), anchor=None, axis=0):
    """Point on the line through anchor (parallel to axis) where u_i = u_j, closest to anchor."""
    g = state.grid
    anchor = np.zeros(g.dim) if anchor is None else np.asarray(anchor, dtype=float)
    t = g.axis
    pts = np.repeat(anchor[None], len(t), axis=0)
    pts[:, axis] = t
    inner = np.abs(t) <= g.half_width - g.h
    pts = pts[inner]
    t = t[inner]
    S = FieldSampler(state)
    u = S.values(pts, list(pair))
    d = u[0] - u[1]
    k = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)[0]
    if len(k) == 0:
        raise DegenerateError("the pair has no interface on this line")
    s = t[k] - d[k] * (t[k + 1] - t[k]) / np.where(d[k + 1] != d[k], d[k + 1] - d[k], 1.0)
    best = s[np.argmin(np.abs(s - anchor[axis]))]
    out = anchor.copy()
    out[axis] = best
    return out


# ---------------------------------------------------------------- seminorms

def _in_ball(grid, radius, centre=None):
    X = grid.nodes()
    c = np.zeros(grid.dim) if centre is None else np.asarray(centre)
    return np.linalg.norm(X - c, axis=-1) <= radius + 1e-12, X


def lipschitz_seminorm(state, radius=0.5, inner=1.0, outer=2.0, use_cutoff=True):
    """max_i max over nodes in B_radius of |grad(eta u_i)|, with argmax node and component.

    Also returns the plain max_i |grad u_i| over the same nodes.
    """
    g = state.grid
    if radius > g.half_width - g.h:
        raise GeometryError("K must lie inside the grid interior")
    mask, X = _in_ball(g, radius)
    eta = cutoff(X, inner, outer) if use_cutoff else np.ones(g.shape)
    best = (-1.0, None, None)
    plain = 0.0
    for i, u in enumerate(state.values):
        G = gradient(GridField(g, eta * u))
        n = np.sqrt((G**2).sum(axis=0))
        n = np.where(mask, n, -np.inf)
        j = np.unravel_index(np.argmax(n), g.shape)
        if n[j] > best[0]:
            best = (float(n[j]), X[j].copy(), i)
        G0 = gradient(GridField(g, np.asarray(u)))
        plain = max(plain, float(np.sqrt((G0**2).sum(axis=0))[mask].max()))
    return {"L": best[0], "argmax": best[1], "component": best[2], "plain": plain}


def holder_seminorm(state, alpha, radius=0.5, comps=None, local=6, pairs=200_000, seed=0):
    """max |u(x) - u(y)| / |x - y|^alpha over node pairs in B_radius.

    Exhaustive when the pair count is at most `pairs`; otherwise all pairs
    within `local` cells of each other plus `pairs` seeded random ones.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    g = state.grid
    mask, X = _in_ball(g, radius)
    pts = X[mask]
    comps = range(state.ncomp) if comps is None else comps
    vals = np.stack([np.asarray(state.values[i])[mask] for i in comps])
    n = len(pts)
    if n < 2:
        return 0.0
    best = 0.0
    if n * (n - 1) // 2 <= pairs:
        for a in range(n - 1):
            d = np.linalg.norm(pts[a + 1:] - pts[a], axis=1) ** alpha
            best = max(best, float((np.abs(vals[:, a + 1:] - vals[:, a:a + 1]) / d).max()))
        return best
    # short-range pairs by shifts on the full grid
    U = np.stack([np.asarray(state.values[i]) for i in comps])
    rng = range(-local, local + 1)
    offs = np.array(np.meshgrid(*[rng] * g.dim, indexing="ij")).reshape(g.dim, -1).T
    offs = offs[[tuple(o) > tuple([0] * g.dim) for o in offs]]
    for o in offs:
        src = tuple(slice(max(0, -k), g.n - max(0, k)) for k in o)
        dst = tuple(slice(max(0, k), g.n - max(0, -k)) for k in o)
        both = mask[src] & mask[dst]
        if not both.any():
            continue
        d = (g.h * np.linalg.norm(o)) ** alpha
        diff = np.abs(U[(slice(None),) + dst] - U[(slice(None),) + src])[:, both]
        best = max(best, float(diff.max() / d))
    r = np.random.default_rng(seed)
    a = r.integers(0, n, pairs)
    b = r.integers(0, n, pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    d = np.linalg.norm(pts[a] - pts[b], axis=1) ** alpha
    best = max(best, float((np.abs(vals[:, a] - vals[:, b]) / d).max()))
    return best


# ---------------------------------------------------------------- blowup

@dataclass
class BlowupFrame:
    x0: np.ndarray
    L: float
    r_scale: float
    M_comp: float
    state: object
    spec: object
    eta0: float
    straightened: object
    interp_error: float

    @property
    def origin_sum(self):
        S = FieldSampler(self.state)
        return float(S.values(np.zeros((1, self.state.dim)))[:, 0].sum())


def rescale(state, spec, factor, amplitude):
    """Relabel a state on the grid with spacing h / factor: w(x) = amplitude * u(factor * x).

    No resampling takes place, so frame identities hold to roundoff.
    """
    g = state.grid
    n_half = int(round(g.half_width / g.h))
    h = g.h / factor
    new = Grid(g.dim, n_half * h, h)
    return state.with_values(amplitude * np.asarray(state.values), grid=new, spec=spec, check=False)


def blowup_scale(state, x0="auto", radius=0.5, inner=1.0, outer=2.0):
    """Blowup frame at x0: v_i(x) = eta(x0) u~_i(r x) / (L r), r = sum_i (eta u_i)(x0) / L."""
    lip = lipschitz_seminorm(state, radius, inner, outer)
    L = lip["L"]
    if x0 is None or (isinstance(x0, str) and x0 == "auto"):
        x0 = lip["argmax"]
    x0 = np.asarray(x0, dtype=float)
    if L <= 0:
        raise DegenerateError("Lipschitz seminorm vanishes")
    st, sspec = straighten(state, x0)
    eta0 = float(cutoff(x0, inner, outer))
    u0 = FieldSampler(st).values(np.zeros((1, st.dim)))[:, 0]
    r = float(eta0 * u0.sum() / L)
    if r <= 0:
        raise DegenerateError("normalisation radius vanishes")
    spec = FramedSpec(sspec, np.zeros(st.dim), r * np.eye(st.dim), np.eye(st.dim),
                      f_out=eta0 * r / L, f_in=L * r / eta0)
    v = rescale(st, spec, r, eta0 / (L * r))
    v.beta = state.beta * (L / eta0) ** (2 * state.gamma) * r ** (2 * state.gamma + 2)
    return BlowupFrame(x0, L, r, v.beta, v, spec, eta0, st, getattr(st, "interp_error", 0.0))


def frame_closeness(frame, count=256, seed=0):
    """Smallest C with ||A_n(y) - Id|| <= C r |y| on sampled points of the rescaled box."""
    st = frame.state
    R = st.grid.half_width
    y = sample_points(st.dim, count, R, seed)
    A = frame.spec.matrix(y)
    dev = np.linalg.norm(A - np.eye(st.dim), ord=2, axis=(1, 2))
    return float((dev / (frame.r_scale * np.linalg.norm(y, axis=1))).max())


# ---------------------------------------------------------------- segregation

def segregation_metrics(state, radius=0.5, n_ang=None):
    """Pairwise sup_K u_i u_j and |beta| int_K a u_i^{g+1} u_j^{g+1} with K = B_radius."""
    g = state.grid
    l = state.ncomp
    mask, X = _in_ball(g, radius)
    U = np.asarray(state.values)
    sup = np.zeros((l, l))
    for i in range(l):
        for j in range(i + 1, l):
            sup[i, j] = sup[j, i] = float((U[i] * U[j])[mask].max())
    S = FieldSampler(state)
    gm = state.gamma
    iu = np.triu_indices(l, 1)

    def integrand(p):
        P = np.abs(S.values(p)) ** (gm + 1)
        a = state.spec.weight(p)
        return np.stack([a * P[i] * P[j] for i, j in zip(*iu)])

    vals = ball_integrals(integrand, g.dim, [radius], g.h, n_ang)[:, 0]
    inter = np.zeros((l, l))
    inter[iu] = abs(state.beta) * vals
    inter = inter + inter.T
    return {"sup_overlap": sup, "interaction": inter}


# ---------------------------------------------------------------- blowdown

def blowdown_scale(state, rho, n_ang=None):
    """w(x) = v(rho x) / sqrt(H(v, rho)) on the relabelled grid."""
    _, H = compute_H(state, rho, n_ang)
    if not H > 0:
        raise DegenerateError(f"H(v, {rho:g}) = {H:.3e} is not positive")
    spec = FramedSpec(state.spec, np.zeros(state.dim), rho * np.eye(state.dim), np.eye(state.dim),
                      f_out=rho**2 / np.sqrt(H), f_in=np.sqrt(H))
    out = rescale(state, spec, rho, 1.0 / np.sqrt(H))
    out.beta = state.beta * H ** state.gamma * rho**2
    return out


def _directions(dim, count):
    if dim == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    ph = np.pi * (1 + 5**0.5) * k
    s = np.sqrt(1 - z**2)
    return np.stack([s * np.cos(ph), s * np.sin(ph), z], axis=1)


def profile_fit(state, pair=(0, 1), radius=1.0, count=64, samples=4096, seed=0):
    """Least-squares fit of (a <x,e>^+, b <x,e>^-) to a pair on B_radius, over directions e.

    Returns the relative L2 residual, direction and amplitudes.
    """
    dim = state.dim
    pts = sample_points(dim, samples, radius, seed)
    U = FieldSampler(state).values(pts, list(pair))
    norm = np.sqrt((U**2).sum())
    if norm == 0:
        raise DegenerateError("pair vanishes on the fitting ball")

    def resid(e):
        e = e / np.linalg.norm(e)
        s = pts @ e
        p, m = np.maximum(s, 0), np.maximum(-s, 0)
        a = (U[0] @ p) / max(p @ p, 1e-300)
        b = (U[1] @ m) / max(m @ m, 1e-300)
        return np.sqrt(((U[0] - a * p) ** 2).sum() + ((U[1] - b * m) ** 2).sum()) / norm, a, b

    D = _directions(dim, count)
    r0 = [resid(e)[0] for e in D]
    e0 = D[int(np.argmin(r0))]
    if dim == 2:
        t0 = np.arctan2(e0[1], e0[0])
        sol = minimize(lambda t: resid(np.array([np.cos(t[0]), np.sin(t[0])]))[0], [t0], method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-12})
        e = np.array([np.cos(sol.x[0]), np.sin(sol.x[0])])
    else:
        sol = minimize(lambda v: resid(v)[0], e0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12})
        e = sol.x / np.linalg.norm(sol.x)
    res, a, b = resid(e)
    return {"residual": float(res), "direction": e, "a": float(a), "b": float(b)}


def blowdown_ladder(state, rhos, pair=(0, 1), n_ang=None):
    out = []
    for rho in rhos:
        w = blowdown_scale(state, rho, n_ang)
        fit = profile_fit(w, pair, radius=1.0)
        out.append({"rho": float(rho), **fit})
    return out
