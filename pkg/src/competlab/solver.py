"""Positive solutions of the competitive system by projected damped Newton with beta continuation."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from .errors import ConfigError, ConvergenceError
from .grid import Grid, GridState, check_exponent, stiffness_matrix


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet data on the box faces.

    kind="faces": component 1 is a cos^2 bump on the face x1 = -L, component 2
    on x1 = +L; with third="bump" component 3 is a narrow bump centred on the
    face x2 = +L. All other components vanish on the boundary.
    """

    kind: str = "faces"
    amplitude: float = 1.0
    third: str = "zero"
    third_amplitude: float = 1.0
    third_width: float = 0.25

    def __post_init__(self):
        if self.kind != "faces":
            raise ConfigError(f"unknown boundary kind {self.kind!r}")
        if self.third not in ("zero", "bump"):
            raise ConfigError(f"unknown third-component mode {self.third!r}")
        if self.amplitude <= 0 or self.third_amplitude <= 0 or not 0 < self.third_width < 1:
            raise ConfigError("boundary amplitudes must be positive and third_width in (0, 1)")


def _bump(s):
    return np.where(np.abs(s) < 1, np.cos(0.5 * np.pi * s) ** 2, 0.0)


def boundary_data(grid, ncomp, bc):
    """Array (l,) + grid shape holding the Dirichlet data on boundary nodes, zero inside."""
    X = grid.nodes()
    L = grid.half_width
    N = grid.dim
    g = np.zeros((ncomp,) + grid.shape)

    def face_bump(axis, side, width, amp):
        on = np.isclose(X[..., axis], side * L)
        val = amp * np.ones(grid.shape)
        for m in range(N):
            if m != axis:
                val = val * _bump(X[..., m] / (width * L))
        return np.where(on, val, 0.0)

    g[0] = face_bump(0, -1, 1.0, bc.amplitude)
    g[1] = face_bump(0, +1, 1.0, bc.amplitude)
    if ncomp >= 3 and bc.third == "bump":
        g[2] = face_bump(1, +1, bc.third_width, bc.third_amplitude)
    g[:, grid.interior_mask()] = 0.0
    return g


@dataclass(frozen=True)
class SolveConfig:
    beta_schedule: tuple = (-1.0,)
    half_width: float = 1.0
    h: float = 1.0 / 32
    dim: int = 2
    ncomp: int = 2
    gamma: float = 1.0
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    tol_residual: float = 1e-8
    max_outer: int = 200
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    max_substeps: int = 8

    def __post_init__(self):
        b = np.asarray(self.beta_schedule, dtype=float)
        if b.size == 0 or np.any(b >= 0):
            raise ConfigError("beta values must be strictly negative (competitive regime)")
        if np.any(np.diff(b) >= 0):
            raise ConfigError("beta_schedule must be strictly decreasing")
        if self.ncomp < 2:
            raise ConfigError("at least two components are required")
        check_exponent(self.gamma, self.dim)
        if self.tol_residual <= 0 or self.max_outer < 1:
            raise ConfigError("tol_residual must be positive and max_outer >= 1")
        Grid(self.dim, self.half_width, self.h)

    @property
    def grid(self):
        return Grid(self.dim, self.half_width, self.h)


@dataclass
class SolveResult:
    state: GridState
    residual_norm: float
    energy: float
    iterations: int
    beta: float
    history: list = field(default_factory=list)
    energies: list = field(default_factory=list)


class _System:
    """Discrete energy, residual and Jacobian for one grid/spec/data triple."""

    def __init__(self, grid, spec, gamma, boundary):
        self.grid = grid
        self.spec = spec
        self.gamma = gamma
        self.l = boundary.shape[0]
        self.K = stiffness_matrix(grid, spec)
        mask = grid.interior_mask().ravel()
        self.inner = np.flatnonzero(mask)
        self.outer = np.flatnonzero(~mask)
        self.Kii = self.K[self.inner][:, self.inner].tocsc()
        self.Kib = self.K[self.inner][:, self.outer]
        self.vol = grid.h**grid.dim
        X = grid.nodes().reshape(-1, grid.dim)
        self.X = X[self.inner]
        self.a = spec.weight(self.X)
        self.g = boundary.reshape(self.l, -1)
        self.gb = self.g[:, self.outer]
        self.forcing = np.stack([self.Kib @ gb for gb in self.gb]) / self.vol
        # boundary part of the energy is constant; keep it so energy() is the full functional
        trap = np.ones(grid.n)
        trap[[0, -1]] = 0.5
        w = trap
        for _ in range(grid.dim - 1):
            w = np.multiply.outer(w, trap)
        self.wb = w.ravel()[self.outer] * self.vol
        self.Xb = X[self.outer]
        self.ab = spec.weight(self.Xb)

    def full(self, U):
        out = self.g.copy()
        out[:, self.inner] = U
        return out.reshape((self.l,) + self.grid.shape)

    def _coupling(self, U, a):
        gm = self.gamma
        P = np.abs(U) ** (gm + 1)
        tot = P.sum(axis=0)
        return P, tot

    def residual(self, U, beta):
        gm = self.gamma
        P, tot = self._coupling(U, self.a)
        R = np.empty_like(U)
        for i in range(self.l):
            lap = (self.Kii @ U[i]) / self.vol + self.forcing[i]
            f = self.spec.reaction.f(i, self.X, U[i])
            others = tot - P[i]
            R[i] = lap - f - beta * self.a * np.abs(U[i]) ** (gm - 1) * U[i] * others
        return R

    def energy(self, U, beta):
        gm = self.gamma
        full = self.full(U).reshape(self.l, -1)
        e = 0.0
        for i in range(self.l):
            e += 0.5 * full[i] @ (self.K @ full[i])
            e -= self.vol * self.spec.reaction.primitive(i, self.X, U[i]).sum()
            e -= (self.wb * self.spec.reaction.primitive(i, self.Xb, self.gb[i])).sum()
        for i in range(self.l):
            for j in range(i + 1, self.l):
                inter = self.vol * (self.a * np.abs(U[i]) ** (gm + 1) * np.abs(U[j]) ** (gm + 1)).sum()
                inter += (self.wb * self.ab * np.abs(self.gb[i]) ** (gm + 1) * np.abs(self.gb[j]) ** (gm + 1)).sum()
                e -= beta / (gm + 1) * inter
        return float(e)

    def jacobian(self, U, beta):
        gm = self.gamma
        P, tot = self._coupling(U, self.a)
        S = np.abs(U) ** (gm - 1) * U
        blocks = [[None] * self.l for _ in range(self.l)]
        for i in range(self.l):
            d = -self.spec.reaction.ds(i, self.X, U[i])
            d = d - beta * self.a * gm * np.abs(U[i]) ** (gm - 1) * (tot - P[i])
            blocks[i][i] = self.Kii / self.vol + sp.diags(d)
            for j in range(self.l):
                if j != i:
                    blocks[i][j] = sp.diags(-beta * self.a * (gm + 1) * S[i] * S[j])
        return sp.bmat(blocks, format="csc")

    def harmonic(self):
        lu = splu(self.Kii)
        return np.stack([lu.solve(-self.Kib @ gb) for gb in self.gb])


def _norm(R):
    return float(np.sqrt(np.mean(R**2)))


def _newton(system, U, beta, cfg, scale):
    """Projected damped Newton on the energy. Returns (U, rel_residual, iters, history, energies)."""
    R = system.residual(U, beta)
    E = system.energy(U, beta)
    history = [_norm(R) / scale]
    energies = [E]
    it = 0
    while history[-1] > cfg.tol_residual:
        if it >= cfg.max_outer:
            raise ConvergenceError(f"no convergence at beta={beta:g} after {it} iterations", U, history)
        it += 1
        g = system.vol * R.ravel()
        try:
            d = spsolve(system.jacobian(U, beta), -R.ravel())
            if not np.all(np.isfinite(d)) or g @ d >= 0:
                raise ValueError
        except (ValueError, RuntimeError):
            # indefinite or singular Jacobian: preconditioned gradient step
            lu = splu(system.Kii / system.vol)
            d = -np.concatenate([lu.solve(r) for r in R])
        d = d.reshape(U.shape)
        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            Un = np.maximum(U + t * d, 0.0)
            En = system.energy(Un, beta)
            if En <= E + cfg.armijo * (g @ (Un - U).ravel()):
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted:
            # energy differences are below roundoff; accept a residual-decreasing full step
            Un = np.maximum(U + d, 0.0)
            En = system.energy(Un, beta)
            Rn = system.residual(Un, beta)
            if _norm(Rn) >= _norm(R) or En > E + 1e-12 * abs(E):
                raise ConvergenceError(f"line search failed at beta={beta:g}", U, history)
        U, E = Un, En
        R = system.residual(U, beta)
        history.append(_norm(R) / scale)
        energies.append(E)
    return U, history[-1], it, history, energies


def _state(system, U, beta, check=True):
    return GridState(system.grid, system.full(U), system.spec, system.gamma, beta, check=check)


def solve(config, spec, initial=None):
    """Solve for every beta in the schedule, warm-starting each from the previous one.

    If Newton fails on a step, geometric intermediate betas are inserted
    (up to max_substeps halvings of log|beta|) and only scheduled betas are reported.
    """
    grid = config.grid
    if spec.dim != grid.dim:
        raise ConfigError("spec and grid dimensions differ")
    g = boundary_data(grid, config.ncomp, config.boundary)
    system = _System(grid, spec, config.gamma, g)
    scale = max(_norm(system.forcing), 1e-300)
    U = system.harmonic() if initial is None else initial.reshape(config.ncomp, -1)[:, system.inner].copy()
    U = np.maximum(U, 0.0)
    results = []
    prev_beta = None
    for beta in config.beta_schedule:
        pending = [beta]
        lo = prev_beta
        depth = 0
        while pending:
            b = pending[0]
            try:
                Un, res, it, hist, ens = _newton(system, U, b, config, scale)
            except ConvergenceError:
                if lo is None or depth >= config.max_substeps:
                    raise
                depth += 1
                mid = -np.sqrt(lo * b) if lo < 0 else b / 10.0
                pending.insert(0, mid)
                continue
            U = Un
            lo = b
            pending.pop(0)
        results.append(SolveResult(_state(system, U, beta), res, system.energy(U, beta), it, float(beta),
                                   hist, ens))
        prev_beta = beta
    return results


def _system_for(state):
    bnd = state.values.copy()
    bnd[:, state.grid.interior_mask()] = 0.0
    return _System(state.grid, state.spec, state.gamma, bnd)


def residual(state):
    """Pointwise residual of every component at interior nodes (boundary entries zero)."""
    system = _system_for(state)
    U = state.values.reshape(state.ncomp, -1)[:, system.inner]
    R = system.residual(U, state.beta)
    out = np.zeros((state.ncomp, state.grid.n ** state.dim))
    out[:, system.inner] = R
    return out.reshape(state.values.shape)


def energy(state):
    system = _system_for(state)
    U = state.values.reshape(state.ncomp, -1)[:, system.inner]
    return system.energy(U, state.beta)


def newton_solve(state, beta=None, tol=1e-10, max_outer=100):
    """Single Newton solve from a given state (beta may be 0 here, unlike SolveConfig)."""
    beta = state.beta if beta is None else beta
    system = _system_for(state)
    scale = max(_norm(system.forcing), 1e-300)
    U = np.maximum(state.values.reshape(state.ncomp, -1)[:, system.inner], 0.0)
    cfg = SolveConfig(tol_residual=tol, max_outer=max_outer, dim=state.dim, ncomp=max(2, state.ncomp),
                      gamma=state.gamma, half_width=state.grid.half_width, h=state.grid.h)
    U, res, it, hist, ens = _newton(system, U, beta, cfg, scale)
    return SolveResult(_state(system, U, beta, check=state.check), res, system.energy(U, beta), it, beta,
                       hist, ens)


def harmonic_extension(state):
    """Independent linear solves K_II u_i = -K_IB g_i per component."""
    system = _system_for(state)
    return system.full(system.harmonic())
