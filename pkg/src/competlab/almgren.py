"""Almgren-type quantities H, E, N and their monotonicity certificates."""
from dataclasses import dataclass, field

import numpy as np

from .certs import Certificate, fit_monotone_constant, worst_violation
from .errors import DegenerateError
from .fields import grad_mu, jacobian_Z, mu, vector_field_Z
from .grid import FieldSampler, ball_integrals, check_exponent, sphere_quadrature

EPS_MONO = 1e-2
C_MAX = 1e3


def geometric_ladder(h, r_max, ratio=1.05, r_min=None):
    r_min = 4 * h if r_min is None else r_min
    k = int(np.floor(np.log(r_max / r_min) / np.log(ratio) + 1e-9))
    return r_min * ratio ** np.arange(k + 1)


@dataclass
class RadialProfile:
    radii: np.ndarray
    H_i: np.ndarray
    E_vol_i: np.ndarray
    E_bdy_i: np.ndarray
    dH_analytic: np.ndarray
    pohozaev_gap: np.ndarray
    constants: dict = field(default_factory=dict)

    @property
    def H(self):
        return self.H_i.sum(axis=0)

    @property
    def E_vol(self):
        return self.E_vol_i.sum(axis=0)

    @property
    def E_bdy(self):
        return self.E_bdy_i.sum(axis=0)

    @property
    def N(self):
        H = self.H
        if np.any(H <= 0):
            raise DegenerateError("H vanishes on the ladder; frequency undefined")
        return self.E_vol / H

    @property
    def dH(self):
        if len(self.radii) < 3:
            return np.full(len(self.radii), np.nan)
        return np.gradient(self.H, self.radii, edge_order=2)

    @property
    def dH_residual(self):
        return np.abs(self.dH - 2 * self.E_vol / self.radii) / self.H

    def rows(self):
        l = self.H_i.shape[0]
        head = ["r"] + [f"H_{i + 1}" for i in range(l)] + ["H", "E_vol", "E_bdy", "N", "dH_residual",
                                                           "pohozaev_gap"]
        with np.errstate(divide="ignore", invalid="ignore"):
            N = self.E_vol / self.H
        cols = [self.radii, *self.H_i, self.H, self.E_vol, self.E_bdy, N, self.dH_residual, self.pohozaev_gap]
        return head, np.column_stack(cols)


def _coupling_products(u, gamma):
    P = np.abs(u) ** (gamma + 1)
    return P, P.sum(axis=0)


def radial_profile(state, radii, n_ang=None, pohozaev=True):
    """All Almgren quantities of a state on a ladder of radii around the origin."""
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    spec = state.spec
    N = state.dim
    l = state.ncomp
    gm = state.gamma
    beta = state.beta
    S = FieldSampler(state)
    react = spec.reaction

    def vol_integrand(p):
        A = spec.matrix(p)
        u = S.values(p)
        e = S.energy_density(p, A)
        P, tot = _coupling_products(u, gm)
        a = spec.weight(p)
        rows = []
        fu = np.stack([react.f(i, p, u[i]) for i in range(l)])
        for i in range(l):
            rows.append(e[i] - fu[i] * u[i] - beta * a * P[i] * (tot - P[i]))
        if pohozaev:
            G = S.gradients(p)
            Z = vector_field_Z(spec, p)
            J = jacobian_Z(spec, p)
            dZ = np.trace(J, axis1=-2, axis2=-1)
            D = spec.matrix_grad(p)
            ZD = np.einsum("pm,pmkl->pkl", Z, D)
            t = dZ * e.sum(axis=0)
            for i in range(l):
                g = G[i]
                t = t + 2 * fu[i] * np.einsum("pk,pk->p", g, Z)
                t = t + np.einsum("pk,pkl,pl->p", g, ZD, g)
                Jg = np.einsum("phj,pj->ph", J, g)
                t = t - 2 * np.einsum("ph,ph->p", Jg, np.einsum("phl,pl->ph", A, g))
            ga = spec.weight_grad(p)
            Zga = np.einsum("pk,pk->p", Z, ga)
            pair = 0.5 * (tot**2 - (P**2).sum(axis=0))
            t = t + 2 * (-dZ / (gm + 1) - Zga / (a * (gm + 1))) * a * beta * pair
            rows.append(t)
        return np.stack(rows)

    vol = ball_integrals(vol_integrand, N, radii, state.grid.h, n_ang)
    E_vol_i = vol[:l] * radii ** (2 - N)
    H_i = np.zeros((l, len(radii)))
    E_bdy_i = np.zeros((l, len(radii)))
    dH = np.zeros(len(radii))
    gap = np.zeros(len(radii))
    for k, r in enumerate(radii):
        q = sphere_quadrature(N, r, n_ang)
        x = q.nodes
        nu = q.directions
        A = spec.matrix(x)
        m = mu(spec, x)
        u = S.values(x)
        G = S.gradients(x)
        AG = np.einsum("pkl,ipl->ipk", A, G)
        flux = np.einsum("ipk,pk->ip", AG, nu)
        dnu_u = np.einsum("ipk,pk->ip", G, nu)
        dnu_mu = np.einsum("pk,pk->p", grad_mu(spec, x), nu)
        H_i[:, k] = (m * u**2) @ q.weights * r ** (1 - N)
        E_bdy_i[:, k] = (u * flux) @ q.weights * r ** (2 - N)
        dH[k] = ((dnu_mu * u**2 + 2 * m * u * dnu_u) @ q.weights).sum() * r ** (1 - N)
        if pohozaev:
            e = S.energy_density(x, A)
            lhs = r * (e.sum(axis=0) @ q.weights)
            Z = vector_field_Z(spec, x)
            surf = 2 * (np.einsum("ipk,pk->ip", G, Z) * flux).sum(axis=0)
            P, tot = _coupling_products(u, gm)
            pair = 0.5 * (tot**2 - (P**2).sum(axis=0))
            Znu = np.einsum("pk,pk->p", Z, nu)
            surf = surf + 2 * Znu / (gm + 1) * spec.weight(x) * beta * pair
            rhs = vol[l, k] + surf @ q.weights
            scale = max(abs(lhs), abs(vol[l, k]), abs(surf @ q.weights))
            gap[k] = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return RadialProfile(radii, H_i, E_vol_i, E_bdy_i, dH, gap if pohozaev else np.full(len(radii), np.nan))


def compute_H(state, r, n_ang=None):
    N = state.dim
    q = sphere_quadrature(N, r, n_ang)
    u = FieldSampler(state).values(q.nodes)
    Hi = (mu(state.spec, q.nodes) * u**2) @ q.weights * r ** (1 - N)
    return Hi, float(Hi.sum())


def compute_E(state, r, form="volume", n_ang=None):
    if form not in ("volume", "boundary"):
        raise ValueError("form must be 'volume' or 'boundary'")
    p = radial_profile(state, [r], n_ang, pohozaev=False)
    Ei = (p.E_vol_i if form == "volume" else p.E_bdy_i)[:, 0]
    return Ei, float(Ei.sum())


def energy_forms(state, r, n_ang=None):
    p = radial_profile(state, [r], n_ang, pohozaev=False)
    ev, eb = float(p.E_vol[0]), float(p.E_bdy[0])
    return {"volume": ev, "boundary": eb, "gap": abs(ev - eb)}


def almgren_quotient(state, r, n_ang=None):
    p = radial_profile(state, [r], n_ang, pohozaev=False)
    if p.H[0] <= 0:
        raise DegenerateError(f"H(r={r:g}) = {p.H[0]:.3e} is not positive")
    return float(p.N[0])


def pohozaev_residual(state, r, n_ang=None):
    return float(radial_profile(state, [r], n_ang, pohozaev=True).pohozaev_gap[0])


def monotonicity_report(state, radii, gamma_exponent=None, eps=EPS_MONO, C_max=C_MAX, n_ang=None,
                        pohozaev=True):
    """Fit C* for (N+1)e^{Cr} and the companion H e^{Cr}; certify positivity of H and N+1."""
    check_exponent(state.gamma if gamma_exponent is None else gamma_exponent, state.dim)
    prof = radial_profile(state, radii, n_ang, pohozaev=pohozaev)
    H = prof.H
    if np.any(H <= 0):
        C, CH = np.inf, np.inf
        N1 = np.full(len(radii), np.nan)
    else:
        N1 = prof.N + 1
        C = fit_monotone_constant(N1, prof.radii, eps)
        CH = max(fit_monotone_constant(h, prof.radii, eps) if np.all(h > 0) else 0.0 for h in prof.H_i)
    prof.constants = {
        "C_star": C,
        "C_H": CH,
        "violation": worst_violation(N1, prof.radii, C if np.isfinite(C) else C_max, eps)
        if np.all(np.isfinite(N1)) else np.inf,
        "H_positive": bool(np.all(H > 0)),
        "N_plus_1_min": float(np.nanmin(N1)) if np.any(np.isfinite(N1)) else np.nan,
        "dH_residual_sup": float(np.nanmax(prof.dH_residual)) if np.all(H > 0) else np.inf,
        "eps_mono": eps,
        "C_max": C_max,
    }
    return prof


def monotonicity_certificate(prof, cid="almgren"):
    c = prof.constants
    ok = (c["C_star"] <= c["C_max"] and c["H_positive"] and c["N_plus_1_min"] >= -c["eps_mono"])
    return Certificate(cid, bool(ok), hypothesis={"H_positive": c["H_positive"]},
                       fitted={"C_star": c["C_star"], "C_H": c["C_H"], "N_plus_1_min": c["N_plus_1_min"]},
                       tolerance={"eps_mono": c["eps_mono"], "C_max": c["C_max"]})


def h_derivative_check(state, radii, n_ang=None, profile=None):
    """|H' - 2E/r| / H with H' by centred differences on the ladder, plus the analytic H' cross-check."""
    p = profile if profile is not None else radial_profile(state, radii, n_ang, pohozaev=False)
    res = p.dH_residual
    idx = np.linspace(1, len(p.radii) - 2, min(5, max(len(p.radii) - 2, 1))).astype(int)
    fd_vs_analytic = np.abs(p.dH[idx] - p.dH_analytic[idx]) / np.maximum(np.abs(p.dH_analytic[idx]), 1e-300)
    return {"radii": p.radii, "residual": res, "sup": float(np.max(res)),
            "analytic_radii": p.radii[idx], "fd_vs_analytic": fd_vs_analytic}


def threshold_radius(profile, C):
    """sup of ladder radii with (N+1)e^{Cr} < 2 - r; (0, True) when the set is empty."""
    r = profile.radii
    ok = (profile.N + 1) * np.exp(C * r) < 2 - r
    if not np.any(ok):
        return 0.0, True
    return float(r[ok].max()), False


def doubling_check(profile, bound, direction, C=None, eps=EPS_MONO, C_max=C_MAX):
    """Doubling-type monotonicity of H / r^{2 bound} under the matching frequency bound."""
    r = profile.radii
    N = profile.N
    H = profile.H
    if direction == "upper":
        hyp = bool(np.all(N <= bound + eps))
        y = H / r ** (2 * bound)
        increasing = False
    elif direction == "lower":
        hyp = bool(np.all(N >= bound - eps))
        y = H / r ** (2 * bound)
        increasing = True
    else:
        raise ValueError("direction must be 'upper' or 'lower'")
    cid = f"doubling_{direction}"
    if not hyp:
        return Certificate(cid, False, hypothesis={"bound": bound, "N_min": N.min(), "N_max": N.max()},
                           skipped=True, reason="frequency bound does not hold on the ladder")
    fitted = fit_monotone_constant(y, r, eps, increasing=increasing)
    use = fitted if C is None else C
    viol = worst_violation(y, r, use, eps, increasing=increasing)
    ok = (fitted <= C_max) if C is None else viol <= eps
    return Certificate(cid, bool(ok), hypothesis={"bound": bound, "N_min": N.min(), "N_max": N.max()},
                       fitted={"C": fitted, "violation": viol}, tolerance={"eps": eps, "C_max": C_max})
