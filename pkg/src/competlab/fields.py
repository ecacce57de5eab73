"""Analytic coefficient families A(x), a(x), f_i(x, s) and derived geometry.

All evaluators are vectorised: points have shape (..., N), matrices come back
as (..., N, N) and matrix derivatives as (..., N, N, N) indexed [m, k, l] for
d A_kl / d x_m.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DomainError, PreconditionError, SingularityError, SpectralError

MATRIX_FAMILIES = ("identity", "constant", "diagonal-smooth", "rotated-perturbation")
WEIGHT_FAMILIES = ("constant", "smooth")
REACTION_FAMILIES = ("zero", "linear", "logistic")


@dataclass(frozen=True)
class Bounds:
    theta: float
    M: float
    delta: float
    d: float
    m: float

    def as_dict(self):
        return {"theta": self.theta, "M": self.M, "delta": self.delta, "d": self.d, "m": self.m}


@dataclass(frozen=True)
class Reaction:
    """f_i(x, s) = kappa_i s (linear) or kappa_i s (1 - s/capacity) (logistic)."""

    family: str = "zero"
    kappa: tuple = (0.0,)
    capacity: float = 1.0

    def __post_init__(self):
        if self.family not in REACTION_FAMILIES:
            raise ValueError(f"unknown reaction family {self.family!r}")
        if self.family == "logistic" and self.capacity <= 0:
            raise ValueError("logistic capacity must be positive")

    def coeff(self, i):
        k = self.kappa
        return float(k[i] if i < len(k) else k[-1])

    def f(self, i, x, s):
        s = np.asarray(s, dtype=float)
        if self.family == "zero":
            return np.zeros_like(s)
        k = self.coeff(i)
        if self.family == "linear":
            return k * s
        return k * s * (1.0 - s / self.capacity)

    def ds(self, i, x, s):
        s = np.asarray(s, dtype=float)
        if self.family == "zero":
            return np.zeros_like(s)
        k = self.coeff(i)
        if self.family == "linear":
            return np.full_like(s, k)
        return k * (1.0 - 2.0 * s / self.capacity)

    def primitive(self, i, x, s):
        s = np.asarray(s, dtype=float)
        if self.family == "zero":
            return np.zeros_like(s)
        k = self.coeff(i)
        if self.family == "linear":
            return 0.5 * k * s**2
        return k * (0.5 * s**2 - s**3 / (3.0 * self.capacity))

    def bound_d(self, m):
        kmax = max(abs(float(k)) for k in self.kappa)
        if self.family == "zero":
            return 0.0
        if self.family == "linear":
            return kmax
        return kmax * (1.0 + m / self.capacity)

    def as_dict(self):
        return {"family": self.family, "kappa": list(self.kappa), "capacity": self.capacity}


@dataclass(frozen=True)
class SourceReaction:
    """x-only forcing f_i(x, s) = g_i(x); used for manufactured solutions."""

    sources: tuple

    def f(self, i, x, s):
        return np.broadcast_to(self.sources[i](x), np.shape(s)).astype(float)

    def ds(self, i, x, s):
        return np.zeros(np.shape(s))

    def primitive(self, i, x, s):
        return self.sources[i](x) * np.asarray(s, dtype=float)

    def bound_d(self, m):
        return np.inf

    def as_dict(self):
        return {"family": "source"}


class Coefficients:
    """Shared interface; subclasses provide matrix/matrix_grad/weight/weight_grad."""

    dim: int
    reaction: object

    def contains(self, x):
        raise NotImplementedError

    def check_domain(self, x):
        ok = self.contains(x)
        if not np.all(ok):
            bad = np.asarray(x)[~ok] if np.ndim(x) > 1 else np.asarray(x)
            raise DomainError(f"point {np.asarray(bad).reshape(-1, self.dim)[0]} outside the coefficient domain")


@dataclass(frozen=True)
class CoefficientSpec(Coefficients):
    dim: int = 2
    matrix_family: str = "identity"
    eps: float = 0.0
    constant_matrix: tuple | None = None
    weight_family: str = "constant"
    weight_value: float = 1.0
    weight_eps: float = 0.0
    reaction: Reaction = field(default_factory=Reaction)
    m: float = 1.0
    domain_halfwidth: float = 2.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.matrix_family not in MATRIX_FAMILIES:
            raise ValueError(f"unknown matrix family {self.matrix_family!r}")
        if self.weight_family not in WEIGHT_FAMILIES:
            raise ValueError(f"unknown weight family {self.weight_family!r}")
        if self.matrix_family == "constant":
            C = np.asarray(self.constant_matrix, dtype=float)
            if C.shape != (self.dim, self.dim) or not np.allclose(C, C.T, rtol=0, atol=0):
                raise ValueError("constant_matrix must be a symmetric dim x dim array")
            if np.linalg.eigvalsh(C)[0] <= 0:
                raise ValueError("constant_matrix must be positive definite")
        if self.matrix_family == "diagonal-smooth" and not 0 <= self.eps < 1:
            raise ValueError("diagonal-smooth needs 0 <= eps < 1")
        if self.matrix_family == "rotated-perturbation" and not 0 <= self.eps * self.dim < 1:
            raise ValueError("rotated-perturbation needs 0 <= eps*dim < 1")
        if self.weight_value <= 0 or not 0 <= self.weight_eps < 1:
            raise ValueError("weight must stay positive")

    def contains(self, x):
        return np.all(np.abs(np.asarray(x, dtype=float)) <= self.domain_halfwidth * (1 + 1e-12), axis=-1)

    def _phases(self, x):
        # diagonal-smooth: g_k(x) = sin(x_k + x_{k+1}/2)
        return x + 0.5 * np.roll(x, -1, axis=-1)

    def matrix(self, x):
        x = np.asarray(x, dtype=float)
        N = self.dim
        shape = x.shape[:-1]
        A = np.zeros(shape + (N, N))
        if self.matrix_family == "identity":
            A[..., range(N), range(N)] = 1.0
        elif self.matrix_family == "constant":
            A[...] = np.asarray(self.constant_matrix, dtype=float)
        elif self.matrix_family == "diagonal-smooth":
            A[..., range(N), range(N)] = 1.0 + self.eps * np.sin(self._phases(x))
        else:
            S = np.sin(x[..., :, None] + x[..., None, :])
            A[...] = self.eps * S
            A[..., range(N), range(N)] += 1.0
        return A

    def matrix_grad(self, x):
        x = np.asarray(x, dtype=float)
        N = self.dim
        D = np.zeros(x.shape[:-1] + (N, N, N))
        if self.matrix_family == "diagonal-smooth":
            c = self.eps * np.cos(self._phases(x))
            for k in range(N):
                D[..., k, k, k] = c[..., k]
                D[..., (k + 1) % N, k, k] = 0.5 * c[..., k]
        elif self.matrix_family == "rotated-perturbation":
            C = self.eps * np.cos(x[..., :, None] + x[..., None, :])
            for m in range(N):
                D[..., m, m, :] += C[..., m, :]
                D[..., m, :, m] += C[..., :, m]
        return D

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        if self.weight_family == "constant":
            return np.full(x.shape[:-1], float(self.weight_value))
        return self.weight_value * (1.0 + self.weight_eps * np.sin(x.sum(axis=-1)))

    def weight_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.weight_family == "constant":
            return np.zeros(x.shape)
        g = self.weight_value * self.weight_eps * np.cos(x.sum(axis=-1))
        return np.repeat(g[..., None], self.dim, axis=-1)

    @property
    def bounds(self):
        N = self.dim
        if self.matrix_family == "identity":
            theta, norm, dnorm = 1.0, 1.0, 0.0
        elif self.matrix_family == "constant":
            ev = np.linalg.eigvalsh(np.asarray(self.constant_matrix, dtype=float))
            theta, norm, dnorm = ev[0], ev[-1], 0.0
        elif self.matrix_family == "diagonal-smooth":
            theta, norm = 1.0 - self.eps, 1.0 + self.eps
            dnorm = self.eps * np.sqrt(1.25 * N)
        else:
            theta, norm = 1.0 - self.eps * N, 1.0 + self.eps * N
            dnorm = self.eps * np.sqrt(2.0 * N * (N + 1))
        amin = self.weight_value * (1.0 - self.weight_eps)
        return Bounds(theta=float(theta), M=float(max(norm, dnorm)), delta=0.5 * amin,
                      d=float(self.reaction.bound_d(self.m)), m=float(self.m))

    def as_dict(self):
        return {
            "kind": "family",
            "dim": self.dim,
            "matrix_family": self.matrix_family,
            "eps": self.eps,
            "constant_matrix": None if self.constant_matrix is None else [list(r) for r in self.constant_matrix],
            "weight_family": self.weight_family,
            "weight_value": self.weight_value,
            "weight_eps": self.weight_eps,
            "reaction": self.reaction.as_dict(),
            "m": self.m,
            "domain_halfwidth": self.domain_halfwidth,
        }


@dataclass(frozen=True, eq=False)
class FramedSpec(Coefficients):
    """Pull-back of a spec under x -> x0 + T x, with conjugation by Sinv.

    A'(x) = Sinv A(x0 + T x) Sinv, a'(x) = a(x0 + T x) and
    f'_i(x, s) = f_out * f_i(x0 + T x, f_in * s).
    """

    base: Coefficients
    x0: np.ndarray
    T: np.ndarray
    Sinv: np.ndarray
    f_out: float = 1.0
    f_in: float = 1.0

    @property
    def dim(self):
        return self.base.dim

    @property
    def reaction(self):
        return _FramedReaction(self)

    def to_base(self, x):
        return self.x0 + np.asarray(x, dtype=float) @ self.T.T

    def contains(self, x):
        return self.base.contains(self.to_base(x))

    def matrix(self, x):
        A = self.base.matrix(self.to_base(x))
        return self.Sinv @ A @ self.Sinv

    def matrix_grad(self, x):
        D = self.base.matrix_grad(self.to_base(x))
        D = np.einsum("...pkl,pm->...mkl", D, self.T)
        return self.Sinv @ D @ self.Sinv

    def weight(self, x):
        return self.base.weight(self.to_base(x))

    def weight_grad(self, x):
        return self.base.weight_grad(self.to_base(x)) @ self.T

    @property
    def bounds(self):
        b = self.base.bounds
        sinv = np.linalg.norm(self.Sinv, 2)
        tnorm = np.linalg.norm(self.T, 2)
        lo = b.theta / max(np.linalg.norm(np.linalg.inv(self.Sinv), 2) ** 2, 1e-300)
        M = max(b.M * sinv**2, b.M * sinv**2 * tnorm)
        return Bounds(theta=float(lo), M=float(M), delta=b.delta, d=b.d * abs(self.f_out * self.f_in),
                      m=b.m / abs(self.f_in))

    def as_dict(self):
        return {"kind": "framed", "base": self.base.as_dict(), "x0": self.x0.tolist(), "T": self.T.tolist(),
                "Sinv": self.Sinv.tolist(), "f_out": self.f_out, "f_in": self.f_in}


@dataclass(frozen=True, eq=False)
class _FramedReaction:
    frame: FramedSpec

    def f(self, i, x, s):
        fr = self.frame
        return fr.f_out * fr.base.reaction.f(i, fr.to_base(x), fr.f_in * np.asarray(s))

    def ds(self, i, x, s):
        fr = self.frame
        return fr.f_out * fr.f_in * fr.base.reaction.ds(i, fr.to_base(x), fr.f_in * np.asarray(s))

    def primitive(self, i, x, s):
        fr = self.frame
        return fr.f_out / fr.f_in * fr.base.reaction.primitive(i, fr.to_base(x), fr.f_in * np.asarray(s))

    def bound_d(self, m):
        return self.frame.bounds.d


@dataclass(frozen=True, eq=False)
class LiftedSpec(Coefficients):
    """Constant extension of a 2D spec in x3: A = blockdiag(A2(x1, x2), 1)."""

    base: Coefficients
    dim: int = 3

    @property
    def reaction(self):
        return _LiftedReaction(self.base.reaction)

    def contains(self, x):
        return self.base.contains(np.asarray(x)[..., :2])

    def matrix(self, x):
        x = np.asarray(x, dtype=float)
        A = np.zeros(x.shape[:-1] + (3, 3))
        A[..., :2, :2] = self.base.matrix(x[..., :2])
        A[..., 2, 2] = 1.0
        return A

    def matrix_grad(self, x):
        x = np.asarray(x, dtype=float)
        D = np.zeros(x.shape[:-1] + (3, 3, 3))
        D[..., :2, :2, :2] = self.base.matrix_grad(x[..., :2])
        return D

    def weight(self, x):
        return self.base.weight(np.asarray(x)[..., :2])

    def weight_grad(self, x):
        x = np.asarray(x)
        g = np.zeros(x.shape)
        g[..., :2] = self.base.weight_grad(x[..., :2])
        return g

    @property
    def bounds(self):
        return self.base.bounds

    def as_dict(self):
        return {"kind": "lifted", "base": self.base.as_dict()}


@dataclass(frozen=True, eq=False)
class _LiftedReaction:
    base: object

    def f(self, i, x, s):
        return self.base.f(i, np.asarray(x)[..., :2], s)

    def ds(self, i, x, s):
        return self.base.ds(i, np.asarray(x)[..., :2], s)

    def primitive(self, i, x, s):
        return self.base.primitive(i, np.asarray(x)[..., :2], s)

    def bound_d(self, m):
        return self.base.bound_d(m)


def spec_from_dict(d):
    kind = d.get("kind", "family")
    if kind == "family":
        r = d.get("reaction", {})
        reaction = Reaction(family=r.get("family", "zero"), kappa=tuple(r.get("kappa", [0.0])),
                            capacity=r.get("capacity", 1.0))
        cm = d.get("constant_matrix")
        return CoefficientSpec(
            dim=d["dim"], matrix_family=d["matrix_family"], eps=d.get("eps", 0.0),
            constant_matrix=None if cm is None else tuple(tuple(row) for row in cm),
            weight_family=d.get("weight_family", "constant"), weight_value=d.get("weight_value", 1.0),
            weight_eps=d.get("weight_eps", 0.0), reaction=reaction, m=d.get("m", 1.0),
            domain_halfwidth=d.get("domain_halfwidth", 2.0))
    if kind == "framed":
        return FramedSpec(spec_from_dict(d["base"]), np.array(d["x0"]), np.array(d["T"]),
                          np.array(d["Sinv"]), d["f_out"], d["f_in"])
    if kind == "lifted":
        return LiftedSpec(spec_from_dict(d["base"]))
    raise ValueError(f"unknown spec kind {kind!r}")


# ---------------------------------------------------------------- evaluation

def eval_matrix(spec, x):
    x = np.asarray(x, dtype=float)
    spec.check_domain(x)
    A = spec.matrix(x)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _nonzero(x):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularityError("quantity undefined at the origin")
    return x, r


def mu(spec, x):
    x, r = _nonzero(x)
    A = spec.matrix(x)
    return np.einsum("...k,...kl,...l->...", x, A, x) / r**2


def vector_field_Z(spec, x):
    x, r = _nonzero(x)
    A = spec.matrix(x)
    Ax = np.einsum("...kl,...l->...k", A, x)
    q = np.einsum("...k,...k->...", x, Ax) / r**2
    return Ax / q[..., None]


def grad_mu(spec, x):
    x, r = _nonzero(x)
    A = spec.matrix(x)
    D = spec.matrix_grad(x)
    Ax = np.einsum("...kl,...l->...k", A, x)
    r2 = r**2
    q = np.einsum("...k,...k->...", x, Ax) / r2
    xDx = np.einsum("...k,...mkl,...l->...m", x, D, x)
    return (xDx + 2 * Ax) / r2[..., None] - 2 * x * (q / r2)[..., None]


def jacobian_Z(spec, x):
    """J[..., h, j] = d Z_j / d x_h."""
    x, r = _nonzero(x)
    A = spec.matrix(x)
    D = spec.matrix_grad(x)
    Ax = np.einsum("...kl,...l->...k", A, x)
    q = np.einsum("...k,...k->...", x, Ax) / r**2
    gq = grad_mu(spec, x)
    DAx = np.einsum("...hjl,...l->...hj", D, x)
    J = (DAx + np.swapaxes(A, -1, -2)) / q[..., None, None]
    J -= gq[..., :, None] * Ax[..., None, :] / (q**2)[..., None, None]
    return J


def div_Z(spec, x):
    return np.trace(jacobian_Z(spec, x), axis1=-2, axis2=-1)


def div_A_grad_radius(spec, x):
    """div(A grad |x|)."""
    x, r = _nonzero(x)
    A = spec.matrix(x)
    D = spec.matrix_grad(x)
    divA = np.einsum("...kkl->...l", D)
    q = np.einsum("...k,...kl,...l->...", x, A, x) / r**2
    return (np.einsum("...l,...l->...", divA, x) + np.trace(A, axis1=-2, axis2=-1) - q) / r


def matrix_sqrt(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("square matrix expected")
    if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(S).max())):
        raise ValueError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w[0] <= 0:
        raise SpectralError(f"matrix not positive definite: eigenvalue {w[0]:.3e}", eigenvalue=float(w[0]))
    R = (V * np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


# ---------------------------------------------------------------- sampling

def sample_points(dim, count, radius, seed=0, ball=True):
    """Deterministic scrambled Halton points in [-radius, radius]^dim (or the ball)."""
    eng = qmc.Halton(d=dim, scramble=True, seed=seed)
    out = []
    need = count
    while need > 0:
        p = (2 * eng.random(max(2 * need, 16)) - 1) * radius
        if ball:
            p = p[np.linalg.norm(p, axis=1) <= radius]
        p = p[np.linalg.norm(p, axis=1) > 1e-9 * radius]
        out.append(p[:need])
        need -= len(out[-1])
    return np.concatenate(out)


@dataclass
class BoundsReport:
    constants: dict
    sample_count: int
    radius: float

    def as_dict(self):
        return {"constants": dict(self.constants), "sample_count": self.sample_count, "radius": self.radius}


def verify_coefficient_bounds(spec, sample_count, radius=0.5, seed=0):
    """Smallest constants validating the near-origin coefficient estimates on a sample set."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    N = spec.dim
    if not np.allclose(spec.matrix(np.zeros(N)), np.eye(N), rtol=0, atol=1e-12):
        raise PreconditionError("A(0) must be the identity; straighten the spec first")
    x = sample_points(N, sample_count, radius, seed)
    r = np.linalg.norm(x, axis=1)
    A = spec.matrix(x)
    q = mu(spec, x)
    c = {
        "A_minus_id": np.linalg.norm(A - np.eye(N), ord=2, axis=(1, 2)) / r,
        "mu_minus_1": np.abs(q - 1) / r,
        "inv_mu_minus_1": np.abs(1 / q - 1) / r,
        "inv_mu2_minus_1": np.abs(1 / q**2 - 1) / r,
        "grad_mu": np.linalg.norm(grad_mu(spec, x), axis=1),
        "div_A_grad_radius": np.abs(div_A_grad_radius(spec, x) - (N - 1) / r),
        "div_Z_minus_N": np.abs(div_Z(spec, x) - N) / r,
    }
    return BoundsReport({k: float(v.max()) for k, v in c.items()}, sample_count, radius)


def check_hypotheses(spec, sample_count=512, seed=0, s_samples=16):
    """Sample the structural hypotheses against the declared bounds."""
    b = spec.bounds
    N = spec.dim
    x = sample_points(N, sample_count, spec.domain_halfwidth, seed, ball=False)
    A = spec.matrix(x)
    ev = np.linalg.eigvalsh(A)
    D = spec.matrix_grad(x)
    dnorm = np.sqrt((D**2).sum(axis=(-3, -2, -1)))
    a = spec.weight(x)
    s = np.linspace(-b.m, b.m, s_samples)
    fd = True
    for i in range(3):
        fv = spec.reaction.f(i, x[:, None, :], s[None, :])
        fd &= bool(np.all(np.abs(fv) <= b.d * np.abs(s)[None, :] * (1 + 1e-12) + 1e-300))
    tol = 1e-12
    return {
        "A1": bool(ev[:, 0].min() >= b.theta - tol),
        "A2": bool(ev[:, -1].max() <= b.M + tol and dnorm.max() <= b.M + tol),
        "a": bool(a.min() > b.delta > 0),
        "Fd": fd,
    }
