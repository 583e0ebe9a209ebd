"""Discrete loop space of R x S^N.

A loop is sampled at M nodes t_k = k/M (indices mod M). Velocities are
forward differences M (u_{k+1} - u_k) and integrals are Riemann sums with
weight 1/M. The perturbation on edge k is the average of the h-field at its
two end nodes, which keeps the scheme exactly invariant under time reversal:

    E_eps(u) = (M/2) sum_k  D_k^T [I + eps (F(r_k) + F(r_{k+1})) / 2] D_k,
    D_k = u_{k+1} - u_k.

Gradients are Euclidean partial derivatives with each sphere block
projected onto T_{x_k} S^N. Hessians are Riemannian (projected second
derivative minus the normal-curvature term).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metric import ConstraintViolation, PerturbationForm

UNIT_TOL = 1e-10
TANGENT_TOL = 1e-10
MIN_NODES = 8


@dataclass(frozen=True, eq=False)
class DiscreteLoop:
    r: np.ndarray  # (M,)
    x: np.ndarray  # (M, N+1)

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] != r.size:
            raise ValueError(f"r has {r.size} nodes but x has shape {x.shape}")
        if r.size < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} nodes, got {r.size}")
        if x.shape[1] < 2:
            raise ValueError("sphere factor must be S^N with N >= 1")
        dev = np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0))
        if dev > UNIT_TOL:
            raise ConstraintViolation(f"loop nodes are off the sphere by {dev:.3e}")
        r.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "x", x)

    @property
    def M(self) -> int:
        return self.r.size

    @property
    def N(self) -> int:
        return self.x.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.x.shape[1] + 1

    @property
    def u(self) -> np.ndarray:
        """Stacked node coordinates, shape (M, N+2)."""
        return np.column_stack((self.r, self.x))

    @classmethod
    def from_u(cls, u) -> "DiscreteLoop":
        u = np.asarray(u, dtype=float)
        return cls(u[:, 0], u[:, 1:])

    @classmethod
    def constant(cls, M: int, c: float, xi) -> "DiscreteLoop":
        xi = np.asarray(xi, dtype=float)
        return cls(np.full(M, float(c)), np.tile(xi, (M, 1)))

    def to_dict(self) -> dict:
        return {"r": self.r.tolist(), "x": self.x.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteLoop":
        return cls(np.asarray(doc["r"]), np.asarray(doc["x"]))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path) -> "DiscreteLoop":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "r"] + [f"x{i}" for i in range(self.N + 1)])
            for k in range(self.M):
                w.writerow([k, f"{k / self.M:.17g}", f"{self.r[k]:.17g}"]
                           + [f"{v:.17g}" for v in self.x[k]])


@dataclass(frozen=True, eq=False)
class LoopTangent:
    dr: np.ndarray  # (M,)
    dx: np.ndarray  # (M, N+1)

    def __post_init__(self):
        object.__setattr__(self, "dr", np.asarray(self.dr, dtype=float).reshape(-1))
        object.__setattr__(self, "dx", np.asarray(self.dx, dtype=float))

    @property
    def u(self) -> np.ndarray:
        return np.column_stack((self.dr, self.dx))

    @classmethod
    def from_u(cls, u) -> "LoopTangent":
        u = np.asarray(u, dtype=float)
        return cls(u[:, 0], u[:, 1:])

    def check_tangent(self, loop: DiscreteLoop, tol: float = TANGENT_TOL) -> None:
        dots = np.abs(np.sum(loop.x * self.dx, axis=1))
        if dots.max() > tol:
            raise ConstraintViolation(f"tangent field leaves the sphere: max |x.dx| = {dots.max():.3e}")

    def norm(self) -> float:
        """Euclidean norm over all node coordinates."""
        return float(np.linalg.norm(self.u))

    def l2_norm(self) -> float:
        return float(np.sqrt(l2_inner(self, self)))


def l2_inner(a, b) -> float:
    """Discrete L^2 product (1/M) sum_k a_k . b_k of two loop-sized fields."""
    ua = a.u if hasattr(a, "u") else np.asarray(a)
    ub = b.u if hasattr(b, "u") else np.asarray(b)
    return float(np.sum(ua * ub) / ua.shape[0])


def _check_form(loop: DiscreteLoop, form: PerturbationForm) -> None:
    if form.dim != loop.dim:
        raise ValueError(f"form acts on R^{form.dim} but loop lives in R^{loop.dim}")


# ---------------------------------------------------------------------------
# energy and derivatives


def energy_parts(loop: DiscreteLoop, form: PerturbationForm):
    """Return (L0, E_M0, G) for the discrete loop."""
    _check_form(loop, form)
    M = loop.M
    d = np.roll(loop.u, -1, axis=0) - loop.u
    L0 = 0.5 * M * float(np.sum(d[:, 0] ** 2))
    EM0 = 0.5 * M * float(np.sum(d[:, 1:] ** 2))
    if not form.terms:
        return L0, EM0, 0.0
    f = form.field(loop.r)
    fe = 0.5 * (f + np.roll(f, -1, axis=0))
    G = 0.5 * M * float(np.einsum("ki,kij,kj->", d, fe, d))
    return L0, EM0, G


def energy(loop: DiscreteLoop, form: PerturbationForm, eps: float) -> float:
    L0, EM0, G = energy_parts(loop, form)
    return (L0 + EM0) + eps * G


def euclidean_gradient(loop: DiscreteLoop, form: PerturbationForm, eps: float) -> np.ndarray:
    """Unprojected partial derivatives of the energy, shape (M, N+2)."""
    _check_form(loop, form)
    M = loop.M
    u = loop.u
    d = np.roll(u, -1, axis=0) - u
    if form.terms and eps != 0.0:
        f, f1, _ = form.field_derivatives(loop.r)
        a = np.eye(loop.dim) + 0.5 * eps * (f + np.roll(f, -1, axis=0))
        w = M * np.einsum("kij,kj->ki", a, d)
        g = np.roll(w, 1, axis=0) - w
        d_prev = np.roll(d, 1, axis=0)
        g[:, 0] += 0.25 * M * eps * (np.einsum("ki,kij,kj->k", d, f1, d)
                                     + np.einsum("ki,kij,kj->k", d_prev, f1, d_prev))
    else:
        w = M * d
        g = np.roll(w, 1, axis=0) - w
    return g


def euclidean_hessian(loop: DiscreteLoop, form: PerturbationForm, eps: float) -> np.ndarray:
    """Second partial derivatives of the energy, shape (M, D, M, D)."""
    _check_form(loop, form)
    M, D = loop.M, loop.dim
    u = loop.u
    d = np.roll(u, -1, axis=0) - u
    k = np.arange(M)
    n = np.roll(k, -1)
    H = np.zeros((M, D, M, D))
    perturbed = bool(form.terms) and eps != 0.0
    if perturbed:
        f, f1, f2 = form.field_derivatives(loop.r)
        a = M * (np.eye(D) + 0.5 * eps * (f + f[n]))
    else:
        a = np.broadcast_to(M * np.eye(D), (M, D, D))
    H[k, :, k, :] += a
    H[n, :, n, :] += a
    H[k, :, n, :] -= a
    H[n, :, k, :] -= a
    if perturbed:
        # s-derivatives of the edge weight: left node k, right node k+1
        for s_node, fd1, fd2 in ((k, f1, f2), (n, f1[n], f2[n])):
            c = 0.5 * M * eps * np.einsum("kij,kj->ki", fd1, d)
            H[s_node, 0, n, :] += c
            H[s_node, 0, k, :] -= c
            H[n, :, s_node, 0] += c
            H[k, :, s_node, 0] -= c
            H[s_node, 0, s_node, 0] += 0.25 * M * eps * np.einsum("ki,kij,kj->k", d, fd2, d)
    return H


def _project(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v - np.sum(x * v, axis=1, keepdims=True) * x


def gradient(loop: DiscreteLoop, form: PerturbationForm, eps: float) -> LoopTangent:
    g = euclidean_gradient(loop, form, eps)
    return LoopTangent(g[:, 0], _project(loop.x, g[:, 1:]))


def residual_norm(loop: DiscreteLoop, form: PerturbationForm, eps: float) -> float:
    return gradient(loop, form, eps).norm()


def hessian(loop: DiscreteLoop, form: PerturbationForm, eps: float) -> np.ndarray:
    """Riemannian Hessian as a dense (M(N+2), M(N+2)) matrix in ambient coordinates.

    Normal directions (r, x) -> (0, x_k) are mapped to zero.
    """
    M, D = loop.M, loop.dim
    H = euclidean_hessian(loop, form, eps)
    g = euclidean_gradient(loop, form, eps)
    P = np.zeros((M, D, D))
    P[:, 0, 0] = 1.0
    P[:, 1:, 1:] = np.eye(D - 1) - np.einsum("ki,kj->kij", loop.x, loop.x)
    H = np.einsum("kia,kilj,ljb->kalb", P, H, P, optimize=True)
    mu = np.sum(loop.x * g[:, 1:], axis=1)
    k = np.arange(M)
    H[k, 1:, k, 1:] -= mu[:, None, None] * P[:, 1:, 1:]
    H = H.reshape(M * D, M * D)
    return 0.5 * (H + H.T)


def tangent_frame(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of each T_{x_k} S^N from a Householder reflection.

    Returns T with shape (M, N+1, N); columns of T[k] span x_k^perp.
    """
    x = np.asarray(x, dtype=float)
    M, n = x.shape
    sgn = np.where(x[:, 0] >= 0.0, 1.0, -1.0)
    v = x.copy()
    v[:, 0] += sgn
    refl = np.eye(n) - 2.0 * np.einsum("ki,kj->kij", v, v) / np.sum(v * v, axis=1)[:, None, None]
    return refl[:, :, 1:]


def loop_frame(loop: DiscreteLoop) -> np.ndarray:
    """Frame Q with shape (M, N+2, N+1) mapping node-tangent coordinates to ambient ones."""
    M, D = loop.M, loop.dim
    Q = np.zeros((M, D, D - 1))
    Q[:, 0, 0] = 1.0
    Q[:, 1:, 1:] = tangent_frame(loop.x)
    return Q


def frame_coords(Q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Ambient (M, D) field -> flat frame coordinates of length M(N+1)."""
    return np.einsum("kia,ki->ka", Q, v).reshape(-1)


def frame_field(Q: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Flat frame coordinates -> ambient (M, D) field."""
    M, _, m = Q.shape
    return np.einsum("kia,ka->ki", Q, np.asarray(c).reshape(M, m))


def sandwich(J: np.ndarray, H: np.ndarray) -> np.ndarray:
    """J^T H J for node-block-diagonal J (M, D, m) and H (M, D, M, D); flat result."""
    M, _, m = J.shape
    out = np.einsum("kia,kilj,ljb->kalb", J, H, J, optimize=True)
    return out.reshape(M * m, M * m)


def tangent_hessian(loop: DiscreteLoop, form: PerturbationForm, eps: float):
    """Riemannian gradient and Hessian in frame coordinates.

    Returns (Q, grad, hess) with grad of length M(N+1) and hess square.
    """
    Q = loop_frame(loop)
    g = euclidean_gradient(loop, form, eps)
    H = sandwich(Q, euclidean_hessian(loop, form, eps))
    mu = np.sum(loop.x * g[:, 1:], axis=1)
    m = loop.dim - 1
    diag = np.zeros((loop.M, m))
    diag[:, 1:] = mu[:, None]
    H -= np.diag(diag.reshape(-1))
    return Q, frame_coords(Q, g), 0.5 * (H + H.T)


def retract(loop: DiscreteLoop, step, scale: float = 1.0) -> DiscreteLoop:
    """Move along an ambient step field and renormalize the sphere part."""
    s = step.u if hasattr(step, "u") else np.asarray(step)
    u = loop.u + scale * s
    x = u[:, 1:] / np.linalg.norm(u[:, 1:], axis=1, keepdims=True)
    return DiscreteLoop(u[:, 0], x)


def o2_act(loop: DiscreteLoop, shift: int, reflect: bool = False) -> DiscreteLoop:
    """Node map k -> (k + shift), preceded by k -> -k when ``reflect``."""
    M = loop.M
    if not 0 <= shift < M:
        raise ValueError(f"shift must lie in [0, {M})")
    k = np.arange(M)
    idx = (-(k + shift)) % M if reflect else (k + shift) % M
    return DiscreteLoop(loop.r[idx], loop.x[idx])


def random_loop(M: int, N: int, rng, amplitude: float = 0.3, modes: int = 3) -> DiscreteLoop:
    """Smooth random loop: a few Fourier modes on top of a random great circle."""
    t = np.arange(M) / M
    basis = [np.ones(M)]
    for j in range(1, modes + 1):
        basis += [np.cos(2 * np.pi * j * t), np.sin(2 * np.pi * j * t)]
    basis = np.array(basis)
    r = rng.standard_normal(basis.shape[0]) @ basis
    pq = np.linalg.qr(rng.standard_normal((N + 1, 2)))[0]
    x = np.outer(np.cos(2 * np.pi * t), pq[:, 0]) + np.outer(np.sin(2 * np.pi * t), pq[:, 1])
    x = x + amplitude * (rng.standard_normal((basis.shape[0], N + 1)).T @ basis).T / np.sqrt(basis.shape[0])
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return DiscreteLoop(r, x)
