"""Two-phase (ACF-type) monotonicity functionals and the spherical spectral toolkit.

Everything here works in dimension 3; 2D states are lifted by constant
extension in x3 before use.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .certs import Certificate, fit_monotone_constant, worst_violation
from .errors import DegenerateError, DomainError, PreconditionError, SingularityError
from .fields import mu, sample_points
from .grid import FieldSampler, ball_integrals, lift_state, sphere_quadrature, tangential_split

EPS_MONO = 1e-2
C_MAX = 1e3


# ---------------------------------------------------------------- gamma

def gamma(t, N=3):
    """Characteristic exponent: the root g >= -(N-2)/2 of g^2 + (N-2) g = t."""
    c = 0.5 * (N - 2)
    t = np.asarray(t, dtype=float)
    if np.any(t < -c * c * (1 + 1e-15) - 1e-300):
        raise DomainError(f"gamma undefined below t = {-c * c}")
    s = np.sqrt(np.maximum(c * c + t, 0.0))
    # t / (s + c) avoids cancellation for small t; it equals s - c
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s + c > 0, t / (s + c), 0.0)
    out = np.where(t < 0, s - c, out)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- B operator

def B_matrix(spec, y):
    """B(y) = A - (A nu)(A nu)^T / mu as a full matrix; it annihilates nu and is symmetric."""
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1)
    if np.any(r == 0):
        raise SingularityError("B undefined at the origin")
    nu = y / r[..., None]
    A = spec.matrix(y)
    Anu = np.einsum("...kl,...l->...k", A, nu)
    m = np.einsum("...k,...k->...", nu, Anu)
    return A - Anu[..., :, None] * Anu[..., None, :] / m[..., None, None]


def operator_B(spec, y, v):
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    ny = np.linalg.norm(y, axis=-1)
    if np.any(ny == 0):
        raise SingularityError("B undefined at the origin")
    if np.any(np.abs(np.einsum("...k,...k->...", v, y)) > 1e-12 * np.maximum(np.linalg.norm(v, axis=-1) * ny, 1e-300)):
        raise PreconditionError("operator_B needs a tangent vector (<v, y> = 0)")
    return np.einsum("...kl,...l->...k", B_matrix(spec, y), v)


def tangent_basis(y):
    """Two orthonormal tangent vectors at each y in R^3 (for sampling B on T_y)."""
    y = np.asarray(y, dtype=float)
    nu = y / np.linalg.norm(y, axis=-1, keepdims=True)
    a = np.where(np.abs(nu[..., :1]) < 0.9, np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    t1 = a - np.einsum("...k,...k->...", a, nu)[..., None] * nu
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(nu, t1)
    return t1, t2


def restricted_B(spec, y):
    """2x2 matrix of B(y) in the tangent basis."""
    t1, t2 = tangent_basis(y)
    B = B_matrix(spec, y)
    T = np.stack([t1, t2], axis=-1)
    return np.einsum("...ka,...kl,...lb->...ab", T, B, T)


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class AcfParams:
    M: float = 0.0
    alpha: float = 0.0
    c: float | None = None
    eps: float | None = None
    lam: float | None = None
    w: float | None = None
    C_doubling: float | None = None
    eta: float = 0.24
    pair: tuple = (0, 1)

    def __post_init__(self):
        if not 0 < self.eta < 0.25:
            raise ValueError("eta must lie in (0, 1/4)")
        if self.pair[0] == self.pair[1]:
            raise ValueError("pair needs two distinct components")


@dataclass
class AcfProfile:
    radii: np.ndarray
    J: np.ndarray
    Lambda: np.ndarray
    params: AcfParams
    flags: dict
    constants: dict = field(default_factory=dict)
    corrected: np.ndarray | None = None

    @property
    def product(self):
        return self.J[0] * self.J[1] / self.radii**4

    def exponent(self):
        """phi(r) with corrected product = product * exp(C phi(r))."""
        p = self.params
        r = self.radii
        M = abs(p.M)
        inv = 0.0 if np.isinf(M) else (M ** (-p.eta) if M > 0 else np.inf)
        eps = self.constants.get("eps_star", 0.0) if p.eps is None else p.eps
        c = self.constants.get("c_star", 0.0) if p.c is None else p.c
        return -inv * r ** (-2 * p.eta) + eps * r**2 + c * r

    def rows(self):
        head = ["r", "J1", "J2", "product", "Lambda1", "Lambda2", "corrected_product"] + [f"h{k}" for k in range(7)]
        corr = self.corrected if self.corrected is not None else np.full(len(self.radii), np.nan)
        cols = [self.radii, self.J[0], self.J[1], self.product, self.Lambda[0], self.Lambda[1], corr]
        cols += [self.flags[f"h{k}"].astype(float) for k in range(7)]
        return head, np.column_stack(cols)


def _as3d(state):
    if state.dim == 2:
        return lift_state(state)
    if state.dim != 3:
        raise PreconditionError("two-phase functionals need N = 3")
    return state


def _pair_products(u, i, j, gamma_exp):
    return np.abs(u[i]) ** (gamma_exp + 1) * np.abs(u[j]) ** (gamma_exp + 1)


# ---------------------------------------------------------------- J and Lambda

def compute_J(state, radii, M, pair=(0, 1), n_ang=None):
    """J_i(r) = int_{B_r} (<A grad u_i, grad u_i> - M a P_1 P_2 - u_i f_i) |y|^{2-N} for i in pair."""
    st = _as3d(state)
    spec = st.spec
    S = FieldSampler(st)
    i, j = pair
    radii = np.atleast_1d(np.asarray(radii, dtype=float))

    def integrand(p):
        u = S.values(p, [i, j])
        e = S.energy_density(p, spec.matrix(p), [i, j])
        pp = np.abs(u[0]) ** (st.gamma + 1) * np.abs(u[1]) ** (st.gamma + 1)
        coup = M * spec.weight(p) * pp if M != 0 else 0.0
        rows = [e[k] - coup - u[k] * spec.reaction.f(c, p, u[k]) for k, c in enumerate((i, j))]
        return np.stack(rows) / np.linalg.norm(p, axis=1)

    return ball_integrals(integrand, 3, radii, st.grid.h, n_ang)


def _sphere_terms(S, spec, r, pair, M, gm, n_ang=None):
    q = sphere_quadrature(3, r, n_ang)
    x = q.nodes
    i, j = pair
    A = spec.matrix(x)
    u = S.values(x, [i, j])
    e = S.energy_density(x, A, [i, j])
    G = S.gradients(x, [i, j])
    nu = q.directions
    m = mu(spec, x)
    flux = np.einsum("ipk,pk->ip", np.einsum("pkl,ipl->ipk", A, G), nu)
    tang = e - flux**2 / m
    pp = np.abs(u[0]) ** (gm + 1) * np.abs(u[1]) ** (gm + 1)
    return q, u, m, tang, pp


def compute_Lambda(state, r, M, alpha, c, pair=(0, 1), n_ang=None):
    """Sphere quotients Lambda_1, Lambda_2 at radius r (tangential B-energy form)."""
    st = _as3d(state)
    spec = st.spec
    S = FieldSampler(st)
    q, u, m, tang, pp = _sphere_terms(S, spec, r, pair, M, st.gamma, n_ang)
    a = spec.weight(q.nodes)
    out = []
    for k, comp in enumerate(pair):
        f = spec.reaction.f(comp, q.nodes, u[k])
        num = r**2 * ((tang[k] - M * a * pp - u[k] * f) @ q.weights) if M != 0 else \
            r**2 * ((tang[k] - u[k] * f) @ q.weights)
        den = ((1 + alpha * r * c) * m * u[k] ** 2) @ q.weights
        if den <= 0:
            raise DegenerateError(f"component {comp + 1} has zero trace on the sphere of radius {r:g}")
        out.append(num / den)
    return np.array(out)


# ---------------------------------------------------------------- conditions

def _coefficient_closeness(spec, radii, count=256, seed=0):
    """Per radius: sup_{B_r} ||A - Id|| / r and sup_{B_r} ||DA||."""
    pts = sample_points(3, count, 1.0, seed)
    out = np.zeros((2, len(radii)))
    for k, r in enumerate(radii):
        p = np.concatenate([pts * r, sphere_quadrature(3, r, 12).nodes])
        A = spec.matrix(p)
        dev = np.linalg.norm(A - np.eye(3), ord=2, axis=(1, 2)).max() / r
        D = spec.matrix_grad(p)
        dn = np.sqrt((D**2).sum(axis=(1, 2, 3))).max()
        out[:, k] = dev, dn
    return out


def acf_profile(state, radii, params, n_ang=None):
    """J, Lambda, the (h0)-(h6) flags and the achieved constants on a ladder."""
    st = _as3d(state)
    spec = st.spec
    N = 3
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    i, j = params.pair
    S = FieldSampler(st)
    gm = st.gamma
    J = compute_J(st, radii, params.M, params.pair, n_ang)

    close = _coefficient_closeness(spec, radii)
    c_r = np.maximum.accumulate(np.maximum(close[0], close[1]))
    c_star = float(c_r.max())
    c_use = c_star if params.c is None else params.c

    Lam = np.zeros((2, len(radii)))
    mass = np.zeros((st.ncomp, len(radii)))
    eps_r = np.zeros(len(radii))
    plain_mass = np.zeros((2, len(radii)))
    for k, r in enumerate(radii):
        q, u, m, tang, pp = _sphere_terms(S, spec, r, params.pair, params.M, gm, n_ang)
        a = spec.weight(q.nodes)
        uall = S.values(q.nodes)
        mass[:, k] = (m * uall**2) @ q.weights * r ** (1 - N)
        plain_mass[:, k] = (u**2) @ q.weights * r ** (1 - N)
        for kk, comp in enumerate(params.pair):
            f = spec.reaction.f(comp, q.nodes, u[kk])
            num = r**2 * ((tang[kk] - params.M * a * pp - u[kk] * f) @ q.weights) if params.M != 0 else \
                r**2 * ((tang[kk] - u[kk] * f) @ q.weights)
            den = ((1 + params.alpha * r * c_use) * m * u[kk] ** 2) @ q.weights
            Lam[kk, k] = num / den if den > 0 else np.nan
            pos = u[kk] > 0
            if np.any(pos):
                eps_r[k] = max(eps_r[k], float((2 * np.abs(f[pos]) / (m[pos] * u[kk][pos])).max()))
    eps_r = np.maximum.accumulate(eps_r)
    eps_star = float(eps_r.max())
    eps_use = eps_star if params.eps is None else params.eps

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = mass[i] / mass[j]
        lam_r = np.maximum(ratio, 1 / ratio)
        others = [c for c in range(st.ncomp) if c not in params.pair]
        third = (mass[others].sum(axis=0) / (mass[i] + mass[j])) if others else np.zeros(len(radii))
    w_r = np.minimum(mass[i], mass[j])

    # sphere-mass doubling: max_{s <= r} D(s) / D(r)
    dbl = np.zeros(len(radii))
    for k in range(len(radii)):
        with np.errstate(divide="ignore", invalid="ignore"):
            dbl[k] = max(np.max(plain_mass[:, : k + 1] / plain_mass[:, k : k + 1]), 1.0)

    c2 = (0.5 * (N - 2)) ** 2
    flags = {
        "h0": c_r <= c_use * (1 + 1e-12),
        "h1": eps_use * radii**2 < c2,
        "h2": eps_r <= eps_use * (1 + 1e-12),
        "h3": np.isfinite(lam_r) & (lam_r <= (params.lam if params.lam is not None else np.inf))
              & (w_r >= (params.w if params.w is not None else 0.0)) & (w_r > 0),
        "h4": c_use * radii < 1.0,
        "h5": np.isfinite(dbl) & (dbl <= (params.C_doubling if params.C_doubling is not None else np.inf)),
        "h6": (J[0] > 0) & (J[1] > 0) & (Lam[0] > 0) & (Lam[1] > 0),
    }
    constants = {
        "c_star": c_star,
        "eps_star": eps_star,
        "h1_margin": float(c2 - eps_use * radii[-1] ** 2),
        "cR": float(c_use * radii[-1]),
    }
    prof = AcfProfile(radii, J, Lam, params, flags, constants)
    prof.constants["_lam_r"] = lam_r
    prof.constants["_w_r"] = w_r
    prof.constants["_third_r"] = third
    prof.constants["_dbl_r"] = dbl
    return prof


def certified_interval(profile):
    """Longest run of consecutive ladder indices where every flag holds."""
    ok = np.all(np.stack([profile.flags[f"h{k}"] for k in range(7)]), axis=0)
    best, start = (0, 0), None
    for k, v in enumerate(np.append(ok, False)):
        if v and start is None:
            start = k
        elif not v and start is not None:
            if k - start > best[1] - best[0]:
                best = (start, k)
            start = None
    return slice(*best)


def check_h_conditions(profile):
    """Flags plus the extremal constants achieved on the certified interval."""
    sl = certified_interval(profile)
    c = profile.constants
    if sl.stop - sl.start == 0:
        sel = slice(0, len(profile.radii))
    else:
        sel = sl
    return {
        "flags": {k: v.copy() for k, v in profile.flags.items()},
        "interval": (float(profile.radii[sel][0]), float(profile.radii[sel][-1])) if sl.stop > sl.start else None,
        "lambda_star": float(np.max(c["_lam_r"][sel])),
        "w_star": float(np.min(c["_w_r"][sel])),
        "C_doubling_star": float(np.max(c["_dbl_r"][sel])),
        "third_ratio": float(np.max(c["_third_r"][sel])),
        "c_star": c["c_star"],
        "eps_star": c["eps_star"],
        "cR": c["cR"],
    }


def acf_monotonicity_report(profile, eta=None, eps=EPS_MONO, C_max=C_MAX):
    """Fit the smallest C making product * exp(C phi(r)) nondecreasing on the certified interval."""
    if eta is not None:
        profile.params = replace(profile.params, eta=eta)
    sl = certified_interval(profile)
    if sl.stop - sl.start < 2:
        profile.corrected = None
        return Certificate("acf_monotonicity", False, skipped=True,
                           reason="(h0)-(h6) do not hold on two consecutive radii")
    P = profile.product[sl]
    phi = profile.exponent()[sl]
    C = fit_monotone_constant(P, phi, eps)
    full = profile.product * np.exp((C if np.isfinite(C) else 0.0) * profile.exponent())
    profile.corrected = full
    viol = worst_violation(P, phi, C if np.isfinite(C) else C_max, eps)
    h = check_h_conditions(profile)
    return Certificate(
        "acf_monotonicity", bool(C <= C_max),
        hypothesis={"interval": list(h["interval"]), "lambda_star": h["lambda_star"], "w_star": h["w_star"],
                    "c_star": h["c_star"], "eps_star": h["eps_star"], "M": profile.params.M,
                    "eta": profile.params.eta},
        fitted={"C_star": C, "violation": viol},
        tolerance={"eps_mono": eps, "C_max": C_max})


def fundamental_correction_bound(state, radii, c=1.0, n_ang=None):
    """Smallest alpha with int u1^2 div(A grad|y|^{-1}) <= alpha c r^{-1} int_{dB_r} mu u1^2 on the ladder.

    The distributional part of div(A grad|y|^{-1}) is -4 pi delta (A(0) = Id);
    the remainder is integrable and handled in polar coordinates.
    """
    st = _as3d(state)
    spec = st.spec
    if not np.allclose(spec.matrix(np.zeros(3)), np.eye(3), atol=1e-12):
        raise PreconditionError("straighten first: A(0) must be the identity")
    S = FieldSampler(st)
    i = 0
    radii = np.atleast_1d(np.asarray(radii, dtype=float))

    def integrand(p):
        r = np.linalg.norm(p, axis=1)
        A = spec.matrix(p)
        D = spec.matrix_grad(p)
        divA = np.einsum("pkkl->pl", D)
        nu = p / r[:, None]
        m = np.einsum("pk,pkl,pl->p", nu, A, nu)
        reg = -(np.einsum("pl,pl->p", divA, p) + np.trace(A, axis1=1, axis2=2) - 3 - 3 * (m - 1)) / r**3
        return S.values(p, [i])[0] ** 2 * reg

    lhs = ball_integrals(integrand, 3, radii, st.grid.h, n_ang)
    u0 = S.values(np.zeros((1, 3)), [i])[0, 0]
    lhs = lhs - 4 * np.pi * u0**2
    den = np.zeros(len(radii))
    for k, r in enumerate(radii):
        q = sphere_quadrature(3, r, n_ang)
        den[k] = c * (1 / r) * ((mu(spec, q.nodes) * S.values(q.nodes, [i])[0] ** 2) @ q.weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(den > 0, lhs / den, np.where(lhs > 0, np.inf, 0.0))
    alpha = float(max(0.0, np.max(need)))
    return Certificate("fundamental_correction", bool(np.isfinite(alpha)),
                       fitted={"alpha_star": alpha, "lhs": lhs, "rhs_unit": den}, tolerance={"c": c})


# ---------------------------------------------------------------- sphere traces and the gamma sum

def sphere_traces(state, r, pair=(0, 1), n_ang=None):
    """Traces of a pair on dB_r mapped to the unit sphere, with unit-sphere tangential gradients."""
    st = _as3d(state)
    S = FieldSampler(st)
    q = sphere_quadrature(3, r, n_ang)
    u = S.values(q.nodes, list(pair))
    G = S.eno_gradients(q.nodes, list(pair))
    tg = np.stack([tangential_split(G[k], q.nodes)[1] * r for k in range(2)])
    unit = sphere_quadrature(3, 1.0, n_ang)
    return {"quad": unit, "u": u[0], "v": u[1], "grad_u": tg[0], "grad_v": tg[1],
            "mu": mu(st.spec, q.nodes), "B": B_matrix(st.spec, q.nodes)}


def gamma_sum_on_sphere(quad, u, v, grad_u, grad_v, k=0.0, eps=0.0, c_tilde=0.0, alpha=0.0, mu_vals=None,
                        B=None, N=3):
    """gamma(x) + gamma(y) for the normalised sphere quotients of a pair of traces.

    Both traces are scaled by the same factor so that the first has unit
    (1 + alpha c~) mu-mass; lambda is then the mass of the second.
    """
    w = quad.weights
    m = np.ones_like(u) if mu_vals is None else mu_vals
    if B is None:
        Eu = np.einsum("pk,pk->p", grad_u, grad_u)
        Ev = np.einsum("pk,pk->p", grad_v, grad_v)
    else:
        Eu = np.einsum("pk,pkl,pl->p", grad_u, B, grad_u)
        Ev = np.einsum("pk,pkl,pl->p", grad_v, B, grad_v)
    mu_u = ((1 + alpha * c_tilde) * m * u**2) @ w
    mu_v = ((1 + alpha * c_tilde) * m * v**2) @ w
    if mu_u <= 0 or mu_v <= 0:
        raise DegenerateError("a trace has zero mass on the sphere")
    s2 = 1.0 / mu_u
    lam = mu_v / mu_u
    inter = (u**2 * v**2) @ w
    x = s2 * (Eu @ w) + k * s2**2 * inter - eps
    y = (s2 * (Ev @ w) + k * s2**2 * inter - eps * lam) / lam
    c = (0.5 * (N - 2)) ** 2
    x, y = max(x, -c), max(y, -c)
    total = float(gamma(x, N) + gamma(y, N))
    return {"sum": total, "margin": total - 2.0, "x": float(x), "y": float(y), "lambda": float(lam)}


# ---------------------------------------------------------------- cap eigenvalues

def _shoot(lam, theta0, N, n):
    """f(theta0) for f'' + (N-2) cot(t) f' + lam f = 0, f(0)=1, f'(0)=0; RK4 with n steps.

    Starts from a two-term series at t = theta0/20 to avoid the singular endpoint.
    """
    lam = np.asarray(lam, dtype=float)
    theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), lam.shape)
    t = theta0 / 20.0
    a1 = -lam / (2 * (N - 1))
    a2 = a1 * ((N - 2) * 2.0 / 3.0 - lam) / (4 * (N + 1))
    f = 1 + a1 * t**2 + a2 * t**4
    g = 2 * a1 * t + 4 * a2 * t**3
    dt = (theta0 - t) / n
    k = N - 2

    def rhs(tt, f, g):
        return g, -k * g / np.tan(tt) - lam * f

    for _ in range(n):
        k1f, k1g = rhs(t, f, g)
        k2f, k2g = rhs(t + dt / 2, f + dt / 2 * k1f, g + dt / 2 * k1g)
        k3f, k3g = rhs(t + dt / 2, f + dt / 2 * k2f, g + dt / 2 * k2g)
        k4f, k4g = rhs(t + dt, f + dt * k3f, g + dt * k3g)
        f = f + dt / 6 * (k1f + 2 * k2f + 2 * k3f + k4f)
        g = g + dt / 6 * (k1g + 2 * k2g + 2 * k3g + k4g)
        t = t + dt
    return f


def _shoot_richardson(lam, theta0, N, n=400):
    f1 = _shoot(lam, theta0, N, n)
    f2 = _shoot(lam, theta0, N, 2 * n)
    return f2 + (f2 - f1) / 15.0


def cap_eigenvalues(theta0, N=3, rtol=1e-12, n=400):
    """First Dirichlet eigenvalues of the Laplace-Beltrami operator on caps {polar angle < theta0}.

    Vectorised bisection on lam: f(theta0; lam) > 0 exactly below the first eigenvalue.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if np.any((theta0 <= 0) | (theta0 >= np.pi)):
        raise DomainError("cap angle must lie in (0, pi)")
    if N not in (2, 3):
        raise DomainError("N must be 2 or 3")
    # bracket: scan a geometric lam grid for the first sign change
    grid = np.geomspace(1e-8, 1e4, 121)
    vals = _shoot_richardson(grid[None, :] * np.ones((len(theta0), 1)), theta0[:, None], N, n // 4)
    neg = vals <= 0
    first = np.argmax(neg, axis=1)
    if not np.all(neg[np.arange(len(theta0)), first]):
        raise DomainError("no eigenvalue bracket found")
    lo = np.where(first > 0, grid[np.maximum(first - 1, 0)], 0.0)
    hi = grid[first]
    while np.any(hi - lo > rtol * hi):
        mid = 0.5 * (lo + hi)
        fm = _shoot_richardson(mid, theta0, N, n)
        pos = fm > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def cap_eigenvalue(theta0, N=3):
    if not 0 < theta0 < np.pi:
        raise DomainError("cap angle must lie in (0, pi)")
    return float(cap_eigenvalues([theta0], N)[0])


def friedman_hayman_check(n_caps=64, N=3):
    """gamma(l1(theta)) + gamma(l1(pi - theta)) over the midpoint grid theta_k = (k + 1/2) pi / n."""
    theta = (np.arange(n_caps) + 0.5) * np.pi / n_caps
    lam = cap_eigenvalues(np.append(theta, np.pi / 2), N)
    lam_hemi = lam[-1]
    lam = lam[:-1]
    sums = gamma(lam, N) + gamma(lam[::-1], N)
    hemi = 2 * gamma(lam_hemi, N)
    k = int(np.argmin(sums))
    step = np.pi / n_caps
    ok = (abs(hemi - 2) <= 1e-5 and sums.min() >= 2 - 1e-6 and abs(theta[k] - np.pi / 2) <= step + 1e-12)
    return Certificate("friedman_hayman", bool(ok),
                       hypothesis={"n_caps": n_caps, "N": N},
                       fitted={"hemisphere_sum": hemi, "min_sum": sums.min(), "argmin_theta": theta[k],
                               "theta": theta, "sums": sums, "lambda": lam},
                       tolerance={"hemisphere": 1e-5, "min": 1e-6, "argmin_steps": 1})


# ---------------------------------------------------------------- stereographic identity

def stereo_phi(y):
    y = np.asarray(y, dtype=float)
    s = (y**2).sum(axis=-1, keepdims=True)
    return np.concatenate([2 * y / (1 + s), (s - 1) / (1 + s)], axis=-1)


def stereo_dphi(y):
    """Jacobian d phi / d y, shape (..., 3, 2)."""
    y = np.asarray(y, dtype=float)
    s = (y**2).sum(axis=-1)
    d = 1 + s
    J = np.zeros(y.shape[:-1] + (3, 2))
    for a in range(2):
        for b in range(2):
            J[..., a, b] = 2 * (a == b) / d - 4 * y[..., a] * y[..., b] / d**2
        J[..., 2, a] = 4 * y[..., a] / d**2
    return J


def _unit_B(Bfun, x):
    return Bfun(x / np.linalg.norm(x, axis=-1, keepdims=True))


def sphere_divergence(u, Bfun, x, h):
    """div_S(B grad_theta u) at unit vectors x via ambient centred differences.

    The ambient field G(z) = B(z/|z|) grad U(z), with U the degree-0 extension
    of u, is tangent to spheres; its ambient divergence on |z| = 1 is the
    surface divergence.
    """
    def U(z):
        return u(z / np.linalg.norm(z, axis=-1, keepdims=True))

    def G(z):
        g = np.stack([(U(z + h * e) - U(z - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)
        return np.einsum("...kl,...l->...k", _unit_B(Bfun, z), g)

    return sum((G(x + h * e)[..., k] - G(x - h * e)[..., k]) / (2 * h) for k, e in enumerate(np.eye(3)))


def planar_divergence(u, Bfun, y, h, N=3):
    """(1+|y|^2)^{N-1} div((1/(4(1+|y|^2)^{N-3})) M(y) grad u~) by centred differences in y."""
    def ut(yy):
        return u(stereo_phi(yy))

    def flux(yy):
        g = np.stack([(ut(yy + h * e) - ut(yy - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
        J = stereo_dphi(yy)
        Jinv = np.linalg.solve(np.einsum("...ka,...kb->...ab", J, J), np.swapaxes(J, -1, -2))
        Mm = Jinv @ Bfun(stereo_phi(yy)) @ J
        s = 1 + (yy**2).sum(axis=-1)
        return np.einsum("...ab,...b->...a", Mm, g) / (4 * s ** (N - 3))[..., None]

    div = sum((flux(y + h * e)[..., k] - flux(y - h * e)[..., k]) / (2 * h) for k, e in enumerate(np.eye(2)))
    return (1 + (y**2).sum(axis=-1)) ** (N - 1) * div


def stereographic_divergence_check(Bfun, u, resolutions=(64, 128, 256), window=1.0, points=9):
    """Gap between the two sides of the stereographic divergence identity, with observed orders.

    h = window / resolution is the difference step on both sides; the gap is
    the max over a points x points lattice in [-window/2, window/2]^2.
    """
    s = np.linspace(-0.5 * window, 0.5 * window, points)
    y = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
    x = stereo_phi(y)
    gaps = []
    for res in resolutions:
        h = window / res
        gaps.append(float(np.max(np.abs(sphere_divergence(u, Bfun, x, h) - planar_divergence(u, Bfun, y, h)))))
    gaps = np.array(gaps)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log(gaps[:-1] / gaps[1:]) / np.log(np.asarray(resolutions[1:]) / np.asarray(resolutions[:-1]))
    return {"resolutions": list(resolutions), "gaps": gaps, "orders": orders}


def identity_B(x):
    """Tangential projector I - nu nu^T (B = Id restricted to the tangent space)."""
    nu = x / np.linalg.norm(x, axis=-1, keepdims=True)
    return np.eye(3) - nu[..., :, None] * nu[..., None, :]


def spec_B(spec):
    """B(y) built from a 3D coefficient spec, for use on the unit sphere."""
    return lambda x: B_matrix(spec, x)
