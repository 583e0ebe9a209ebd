"""Product metric on R x S^N and separable perturbation fields.

Points of M = R x S^N are stored in ambient coordinates (s, xi) with
xi in R^{N+1}; tangent vectors as (rho, eta) with xi . eta = 0. The
perturbation h is a finite sum of ``profile(s) * block`` terms where every
block is a symmetric (N+2) x (N+2) matrix acting on ambient velocities
ordered (R-direction, sphere coordinates).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

UNIT_TOL = 1e-12
TANGENT_TOL = 1e-10
SYMMETRY_TOL = 1e-12


class ConstraintViolation(ValueError):
    """Raised when a point or vector is off the manifold or its tangent space."""


class UnsupportedDerivative(ValueError):
    """Raised when an analytic s-derivative is requested for a custom profile."""


@dataclass(frozen=True)
class AmbientPoint:
    s: float
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        object.__setattr__(self, "xi", xi)
        if abs(np.linalg.norm(xi) - 1.0) > UNIT_TOL:
            raise ConstraintViolation(f"|xi| = {np.linalg.norm(xi)!r} is not 1")

    @property
    def N(self) -> int:
        return self.xi.size - 1


@dataclass(frozen=True)
class TangentVector:
    rho: float
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    def ambient(self) -> np.ndarray:
        return np.concatenate(([self.rho], self.eta))


def _check_tangent(pt: AmbientPoint, *vs: TangentVector) -> None:
    for v in vs:
        if v.eta.shape != pt.xi.shape:
            raise ConstraintViolation("tangent vector has the wrong dimension")
        dot = float(pt.xi @ v.eta)
        if abs(dot) > TANGENT_TOL:
            raise ConstraintViolation(f"xi . eta = {dot!r}, vector is not tangent")


# ---------------------------------------------------------------------------
# profiles


class Profile:
    """Scalar function of s with (optionally) analytic first/second derivatives."""

    kind = "custom"
    analytic = False

    def __init__(self, func=None, **params):
        self._func = func
        self.params = params

    def __call__(self, s):
        if self._func is None:
            raise NotImplementedError
        return self._func(np.asarray(s, dtype=float))

    def d1(self, s):
        raise UnsupportedDerivative(f"profile {self.kind!r} has no analytic derivative")

    def d2(self, s):
        raise UnsupportedDerivative(f"profile {self.kind!r} has no analytic derivative")

    def derivatives(self, s):
        """Return (value, first, second derivative) at s."""
        return self(s), self.d1(s), self.d2(s)

    def to_dict(self) -> dict:
        if not self.analytic:
            raise ValueError("custom profiles cannot be serialized")
        return {"kind": self.kind, "params": {k: _jsonable(v) for k, v in self.params.items()}}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [float(a) for a in v]
    return float(v)


class Constant(Profile):
    kind = "constant"
    analytic = True

    def __init__(self, value: float = 1.0):
        super().__init__(value=float(value))

    def __call__(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.params["value"])

    def d1(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def d2(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


class Gaussian(Profile):
    """exp(-(s - c)^2 / sigma^2)."""

    kind = "gaussian"
    analytic = True

    def __init__(self, c: float = 0.0, sigma: float = 1.0):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        super().__init__(c=float(c), sigma=float(sigma))

    def _u(self, s):
        return (np.asarray(s, dtype=float) - self.params["c"]) / self.params["sigma"]

    def __call__(self, s):
        return np.exp(-self._u(s) ** 2)

    def d1(self, s):
        u = self._u(s)
        return -2.0 * u / self.params["sigma"] * np.exp(-u**2)

    def d2(self, s):
        u = self._u(s)
        return (4.0 * u**2 - 2.0) / self.params["sigma"] ** 2 * np.exp(-u**2)


class OddDecay(Profile):
    """tanh(s) / (1 + s^2): odd, decaying, positive for s > 0."""

    kind = "odd_decay"
    analytic = True

    def __init__(self):
        super().__init__()

    def derivatives(self, s):
        s = np.asarray(s, dtype=float)
        t = np.tanh(s)
        t1 = 1.0 - t**2
        t2 = -2.0 * t * t1
        g = 1.0 / (1.0 + s**2)
        g1 = -2.0 * s * g**2
        g2 = (6.0 * s**2 - 2.0) * g**3
        return t * g, t1 * g + t * g1, t2 * g + 2.0 * t1 * g1 + t * g2

    def __call__(self, s):
        return self.derivatives(s)[0]

    def d1(self, s):
        return self.derivatives(s)[1]

    def d2(self, s):
        return self.derivatives(s)[2]


class BumpPair(Profile):
    """gaussian(s; +c, sigma) - gaussian(s; -c, sigma)."""

    kind = "bump_pair"
    analytic = True

    def __init__(self, c: float = 2.0, sigma: float = 1.0):
        super().__init__(c=float(c), sigma=float(sigma))
        self._plus = Gaussian(c, sigma)
        self._minus = Gaussian(-c, sigma)

    def __call__(self, s):
        return self._plus(s) - self._minus(s)

    def d1(self, s):
        return self._plus.d1(s) - self._minus.d1(s)

    def d2(self, s):
        return self._plus.d2(s) - self._minus.d2(s)


class PolyGaussian(Profile):
    """P(s) * exp(-(s - c)^2 / sigma^2) with P given by ascending coefficients."""

    kind = "poly_gaussian"
    analytic = True

    def __init__(self, coeffs=(1.0,), c: float = 0.0, sigma: float = 1.0):
        super().__init__(coeffs=[float(a) for a in coeffs], c=float(c), sigma=float(sigma))
        self._p = Polynomial(self.params["coeffs"])
        self._g = Gaussian(c, sigma)

    def derivatives(self, s):
        s = np.asarray(s, dtype=float)
        p, p1, p2 = self._p(s), self._p.deriv(1)(s), self._p.deriv(2)(s)
        g, g1, g2 = self._g(s), self._g.d1(s), self._g.d2(s)
        return p * g, p1 * g + p * g1, p2 * g + 2.0 * p1 * g1 + p * g2

    def __call__(self, s):
        return self.derivatives(s)[0]

    def d1(self, s):
        return self.derivatives(s)[1]

    def d2(self, s):
        return self.derivatives(s)[2]


PROFILE_KINDS = {
    cls.kind: cls for cls in (Constant, Gaussian, OddDecay, BumpPair, PolyGaussian)
}


def profile_from_dict(spec: dict) -> Profile:
    kind = spec.get("kind")
    if kind not in PROFILE_KINDS:
        raise ValueError(f"unknown profile kind {kind!r}; expected one of {sorted(PROFILE_KINDS)}")
    return PROFILE_KINDS[kind](**spec.get("params", {}))


# ---------------------------------------------------------------------------
# perturbation form


@dataclass
class PerturbationForm:
    """h(s, xi) = sum_j profile_j(s) * block_j on ambient velocities."""

    dim: int  # N + 2
    terms: list = field(default_factory=list)
    claims_h1: bool = False
    claims_h2: bool = False
    claims_h3: bool = False

    def __post_init__(self):
        if self.dim < 3:
            raise ValueError("ambient dimension N + 2 must be at least 3")
        checked = []
        for profile, block in self.terms:
            block = np.array(block, dtype=float)
            if block.shape != (self.dim, self.dim):
                raise ValueError(f"block shape {block.shape} does not match ({self.dim}, {self.dim})")
            if np.max(np.abs(block - block.T), initial=0.0) > SYMMETRY_TOL:
                raise ValueError("perturbation blocks must be symmetric")
            checked.append((profile, 0.5 * (block + block.T)))
        self.terms = checked

    @property
    def N(self) -> int:
        return self.dim - 2

    @property
    def is_zero(self) -> bool:
        return all(not np.any(b) for _, b in self.terms)

    @property
    def analytic(self) -> bool:
        return all(p.analytic for p, _ in self.terms)

    @classmethod
    def zero(cls, N: int) -> "PerturbationForm":
        return cls(N + 2, [], claims_h1=True)

    @classmethod
    def single(cls, profile: Profile, block, **claims) -> "PerturbationForm":
        block = np.asarray(block, dtype=float)
        return cls(block.shape[0], [(profile, block)], **claims)

    def field(self, s) -> np.ndarray:
        """Summed block field at s; shape s.shape + (dim, dim)."""
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (self.dim, self.dim))
        for profile, block in self.terms:
            out += np.asarray(profile(s))[..., None, None] * block
        return out

    def field_derivatives(self, s):
        """Return the summed field and its first two s-derivatives at s."""
        s = np.asarray(s, dtype=float)
        shape = s.shape + (self.dim, self.dim)
        f0, f1, f2 = np.zeros(shape), np.zeros(shape), np.zeros(shape)
        for profile, block in self.terms:
            v, d1, d2 = profile.derivatives(s)
            f0 += np.asarray(v)[..., None, None] * block
            f1 += np.asarray(d1)[..., None, None] * block
            f2 += np.asarray(d2)[..., None, None] * block
        return f0, f1, f2

    def sphere_block(self, s) -> np.ndarray:
        return self.field(s)[..., 1:, 1:]

    def block_norm_sum(self) -> float:
        return float(sum(np.linalg.norm(b, 2) for _, b in self.terms))

    def to_dict(self) -> dict:
        return {
            "terms": [{"profile": p.to_dict(), "block": b.tolist()} for p, b in self.terms],
            "claims": {"h1": self.claims_h1, "h2": self.claims_h2, "h3": self.claims_h3},
        }

    @classmethod
    def from_dict(cls, doc: dict, N: int | None = None) -> "PerturbationForm":
        terms = [(profile_from_dict(t["profile"]), np.asarray(t["block"], dtype=float))
                 for t in doc.get("terms", [])]
        if terms:
            dim = terms[0][1].shape[0]
            if N is not None and dim != N + 2:
                raise ValueError(f"blocks are {dim}x{dim} but N + 2 = {N + 2}")
        elif N is not None:
            dim = N + 2
        else:
            raise ValueError("cannot infer N from a form without terms")
        claims = doc.get("claims", {})
        return cls(dim, terms, claims_h1=bool(claims.get("h1", False)),
                   claims_h2=bool(claims.get("h2", False)),
                   claims_h3=bool(claims.get("h3", False)))

    @classmethod
    def load(cls, path, N: int | None = None) -> "PerturbationForm":
        return cls.from_dict(json.loads(Path(path).read_text()), N=N)


def builtin_form(name: str, N: int) -> PerturbationForm:
    """Named forms used by the demos, the CLI and the acceptance suite.

    ``odd_decay_identity``  odd_decay x identity, satisfies (h1)+(h2)
    ``odd_decay_aniso``     odd_decay x diag(1, 1, 2, ..., N+1), (h1)+(h2), isolated critical circles
    ``gaussian``            gaussian(0, 1) x identity, (h1)+(h3)
    ``gaussian_aniso``      gaussian(0, 1) x diag(1, 1, 2, ..., N+1)
    ``zero``                h = 0
    """
    dim = N + 2
    aniso = np.diag(np.concatenate(([1.0], np.arange(1.0, N + 2.0))))
    if name == "zero":
        return PerturbationForm.zero(N)
    if name == "odd_decay_identity":
        return PerturbationForm.single(OddDecay(), np.eye(dim), claims_h1=True, claims_h2=True)
    if name == "odd_decay_aniso":
        return PerturbationForm.single(OddDecay(), aniso, claims_h1=True, claims_h2=True)
    if name == "gaussian":
        return PerturbationForm.single(Gaussian(0.0, 1.0), np.eye(dim), claims_h1=True, claims_h3=True)
    if name == "gaussian_aniso":
        return PerturbationForm.single(Gaussian(0.0, 1.0), aniso, claims_h1=True, claims_h3=True)
    raise ValueError(f"unknown builtin form {name!r}")


BUILTIN_FORMS = ("zero", "odd_decay_identity", "odd_decay_aniso", "gaussian", "gaussian_aniso")


# ---------------------------------------------------------------------------
# evaluation


def eval_g0(pt: AmbientPoint, v: TangentVector, w: TangentVector) -> float:
    _check_tangent(pt, v, w)
    return float(v.rho * w.rho + v.eta @ w.eta)


def eval_h(pt: AmbientPoint, v: TangentVector, w: TangentVector, form: PerturbationForm) -> float:
    _check_tangent(pt, v, w)
    if not form.terms:
        return 0.0
    a, b = v.ambient(), w.ambient()
    f = form.field(pt.s)
    # float addition commutes, so swapping (v, w) gives the same bits
    return float(0.5 * (a @ f @ b + b @ f @ a))


def _sample_sphere(N: int, samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, N + 1))
    return xi / np.linalg.norm(xi, axis=1, keepdims=True)


@dataclass
class DecayReport:
    radius: float
    sup_norm: float
    threshold: float
    passed: bool


def check_h1(form: PerturbationForm, radius: float, samples: int = 64,
             threshold: float = 1e-2) -> DecayReport:
    """Sup of the operator norm of the h-field at s = +-radius.

    Passes iff the sup is at most ``threshold`` times the summed block norms.
    Separable fields do not depend on xi, so ``samples`` only matters for the
    precondition check.
    """
    if radius <= 0 or samples < 1:
        raise ValueError("need radius > 0 and samples >= 1")
    sup = 0.0
    for s in (radius, -radius):
        sup = max(sup, float(np.linalg.norm(form.field(s), 2)))
    scale = form.block_norm_sum()
    limit = threshold * scale
    return DecayReport(radius, sup, limit, sup <= limit)


@dataclass
class DefinitenessReport:
    radius: float
    eig_plus: np.ndarray
    eig_minus: np.ndarray
    positive_at_plus: bool
    negative_at_minus: bool

    @property
    def passed(self) -> bool:
        return self.positive_at_plus and self.negative_at_minus


def check_h2(form: PerturbationForm, radius: float) -> DefinitenessReport:
    """Eigenvalues of the sphere block at s = +radius (want > 0) and -radius (want < 0)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    ep = np.linalg.eigvalsh(form.sphere_block(radius))
    em = np.linalg.eigvalsh(form.sphere_block(-radius))
    return DefinitenessReport(radius, ep, em, bool(np.all(ep > 0)), bool(np.all(em < 0)))


@dataclass
class SlopeReport:
    radius: float
    products: np.ndarray
    passed: bool


def check_h3(form: PerturbationForm, radius: float, samples: int = 64, seed: int = 0) -> SlopeReport:
    """dh/ds(R, xi)[eta, eta] * dh/ds(-R, xi)[eta, eta] over sampled unit tangents.

    Passes iff every sampled product is nonzero.
    """
    if not form.analytic:
        raise UnsupportedDerivative("check_h3 needs analytic profile derivatives")
    xi = _sample_sphere(form.N, samples, seed)
    rng = np.random.default_rng(seed + 1)
    eta = rng.standard_normal(xi.shape)
    eta -= np.sum(eta * xi, axis=1, keepdims=True) * xi
    eta /= np.linalg.norm(eta, axis=1, keepdims=True)
    _, dplus, _ = form.field_derivatives(radius)
    _, dminus, _ = form.field_derivatives(-radius)
    qp = np.einsum("ki,ij,kj->k", eta, dplus[1:, 1:], eta)
    qm = np.einsum("ki,ij,kj->k", eta, dminus[1:, 1:], eta)
    prod = qp * qm
    return SlopeReport(radius, prod, bool(np.all(prod != 0.0)))
