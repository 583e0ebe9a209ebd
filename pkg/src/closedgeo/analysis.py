"""Second-variation spectra, O(2) quotient of loops, and the cylinder degree test."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import loop as lp
from .loop import DiscreteLoop, LoopTangent
from .metric import PerturbationForm, UnsupportedDerivative
from .reduction import CircleParam, gamma_grad, horizontal_basis

KERNEL_REL_TOL = 1e-7
GAP_RELIABLE = 10.0


class NotCriticalError(ValueError):
    pass


@dataclass
class SpectrumSummary:
    eigenvalues: np.ndarray  # ascending
    kernel_dim: int
    morse_index: int
    positive: int
    threshold: float
    gap_ratio: float
    reliable: bool

    def to_dict(self, with_eigenvalues: bool = False) -> dict:
        out = {"kernel_dim": self.kernel_dim, "morse_index": self.morse_index,
               "positive": self.positive, "threshold": self.threshold,
               "gap_ratio": self.gap_ratio, "reliable": self.reliable}
        if with_eigenvalues:
            out["eigenvalues"] = self.eigenvalues.tolist()
        return out


def summarize_spectrum(eigs, rel_tol: float = KERNEL_REL_TOL) -> SpectrumSummary:
    """Split a symmetric spectrum into kernel / negative / positive parts.

    The kernel cut is |lambda| <= rel_tol * max|lambda|. The gap ratio is the
    smallest |lambda| outside the cut over the largest inside it; below 10 the
    summary is flagged unreliable.
    """
    eigs = np.sort(np.asarray(eigs, dtype=float))
    mags = np.abs(eigs)
    thr = rel_tol * float(mags.max()) if mags.size else 0.0
    inside = mags <= thr
    kernel = int(inside.sum())
    morse = int(np.sum(eigs < -thr))
    pos = int(np.sum(eigs > thr))
    outside = mags[~inside]
    if outside.size == 0:
        gap = 1.0
    elif kernel == 0:
        gap = float(outside.min() / thr) if thr > 0 else math.inf
    else:
        largest = float(mags[inside].max())
        gap = math.inf if largest == 0.0 else float(outside.min() / largest)
    return SpectrumSummary(eigs, kernel, morse, pos, thr, gap, gap >= GAP_RELIABLE)


def spectrum(loop: DiscreteLoop, form: PerturbationForm, eps: float,
             rel_tol: float = KERNEL_REL_TOL) -> SpectrumSummary:
    """Spectrum of the Riemannian Hessian in node-tangent coordinates (size M(N+1))."""
    _, _, H = lp.tangent_hessian(loop, form, eps)
    return summarize_spectrum(np.linalg.eigvalsh(H), rel_tol)


def _sphere_part(loop) -> DiscreteLoop:
    if isinstance(loop, DiscreteLoop):
        return DiscreteLoop(np.zeros(loop.M), loop.x)
    x = np.asarray(loop, dtype=float)
    return DiscreteLoop(np.zeros(x.shape[0]), x)


def sphere_hessian(loop) -> np.ndarray:
    """Hessian of E_{M0} (sphere factor only) in sphere-tangent coordinates, size M N."""
    base = _sphere_part(loop)
    _, _, H = lp.tangent_hessian(base, PerturbationForm.zero(base.N), 0.0)
    m = base.N + 1
    keep = np.arange(base.M * m) % m != 0
    return H[np.ix_(keep, keep)]


@dataclass
class NondegeneracyResult:
    nondegenerate: bool
    kernel_dim: int
    summary: SpectrumSummary


def nondegeneracy_check(loop, form: PerturbationForm | None = None, crit_tol: float = 1e-8,
                        rel_tol: float = KERNEL_REL_TOL) -> NondegeneracyResult:
    """Kernel dimension of the second variation of E_{M0} at a closed geodesic of S^N.

    Nondegenerate means the kernel is spanned by the phase direction alone.
    ``form`` is accepted for interface symmetry; the M0 energy is unperturbed.
    """
    base = _sphere_part(loop)
    res = lp.residual_norm(base, PerturbationForm.zero(base.N), 0.0)
    if res > crit_tol:
        raise NotCriticalError(f"loop is not a critical point of E_M0 (residual {res:.3e})")
    summary = summarize_spectrum(np.linalg.eigvalsh(sphere_hessian(base)), rel_tol)
    return NondegeneracyResult(summary.kernel_dim == 1, summary.kernel_dim, summary)


def jacobi_form_unit_sphere(zdot: np.ndarray, y: np.ndarray, ydot: np.ndarray) -> float:
    """int |D_t y|^2 - <R(y, z') z', y> dt for curvature-one spheres, y normal to z.

    With sectional curvature 1 the curvature term is |z'|^2 |y|^2 - (z'.y)^2.
    Arrays are samples on a uniform grid of [0, 1); ``ydot`` is the covariant
    derivative of y along the curve.
    """
    curv = np.sum(zdot**2, axis=1) * np.sum(y**2, axis=1) - np.sum(zdot * y, axis=1) ** 2
    return float(np.mean(np.sum(ydot**2, axis=1) - curv))


def normal_mode(param: CircleParam, M: int, k: int, direction=None) -> LoopTangent:
    """Normal field e cos(2 pi k t) (k = 0) or e sin(2 pi k t) (k >= 1), L^2 norm^2 = 1/2.

    Its second variation at the great circle is 2 pi^2 (k^2 - 1) in the continuum.
    """
    e = horizontal_basis(param)[:, 0] if direction is None else np.asarray(direction, dtype=float)
    t = np.arange(M) / M
    amp = np.full(M, 1.0 / math.sqrt(2.0)) if k == 0 else np.sin(2 * math.pi * k * t)
    return LoopTangent(np.zeros(M), np.outer(amp, e))


# ---------------------------------------------------------------------------
# O(2) quotient


def align(a: DiscreteLoop, b: DiscreteLoop):
    """(shift, reflect, distance) minimizing the RMS node distance of o2_act(a, shift, reflect) to b."""
    if a.M != b.M or a.dim != b.dim:
        raise ValueError("loops must share node count and dimension")
    M = a.M
    ua, ub = a.u, b.u
    k = np.arange(M)
    best = None
    for reflect in (False, True):
        idx = (k[None, :] + k[:, None]) % M  # row s: nodes k + s
        if reflect:
            idx = (-idx) % M
        d2 = np.mean(np.sum((ua[idx] - ub[None]) ** 2, axis=2), axis=1)
        s = int(np.argmin(d2))
        cand = (float(d2[s]), int(reflect), s)
        if best is None or cand < best:
            best = cand
    d2, reflect, s = best
    return s, bool(reflect), math.sqrt(d2)


def _fourier_shift(u: np.ndarray, delta: float) -> np.ndarray:
    M = u.shape[0]
    freq = np.fft.fftfreq(M, d=1.0 / M)
    U = np.fft.fft(u, axis=0) * np.exp(2j * math.pi * freq * delta / M)[:, None]
    return np.fft.ifft(U, axis=0).real


def align_distance(a: DiscreteLoop, b: DiscreteLoop, subnode: bool = True) -> float:
    """Align distance, optionally refined over fractional shifts by trigonometric interpolation.

    Refinement only ever lowers the discrete value; it absorbs continuous phase
    offsets that the node-shift search cannot reach.
    """
    s, reflect, dist = align(a, b)
    if not subnode or dist == 0.0:
        return dist
    ua = lp.o2_act(a, s, reflect).u
    ub = b.u

    def rms(delta):
        return math.sqrt(float(np.mean(np.sum((_fourier_shift(ua, delta) - ub) ** 2, axis=1))))

    res = minimize_scalar(rms, bounds=(-1.0, 1.0), method="bounded", options={"xatol": 1e-10})
    return min(dist, float(res.fun))


@dataclass
class OrbitClass:
    representative: object
    members: int
    alignment_distance: float

    def to_dict(self) -> dict:
        rep = self.representative
        body = rep.to_dict() if hasattr(rep, "to_dict") else None
        return {"members": self.members, "alignment_distance": self.alignment_distance,
                "representative": body}


def _as_loop(item) -> DiscreteLoop:
    return item.loop if hasattr(item, "loop") else item


def _sort_key(item):
    L = _as_loop(item)
    e = getattr(item, "energy", None)
    if e is None:
        e = lp.energy(L, PerturbationForm.zero(L.N), 0.0)
    return (round(float(e), 9), tuple(np.round(L.u.reshape(-1), 9)))


def default_dedup_tol(M: int) -> float:
    return 1e-4 * math.sqrt(M)


def dedup(items, tol: float | None = None, subnode: bool = True) -> list:
    """Greedy clustering of loops (or certificates) by align distance."""
    items = sorted(items, key=_sort_key)
    if not items:
        return []
    tol = default_dedup_tol(_as_loop(items[0]).M) if tol is None else tol
    classes = []
    for it in items:
        L = _as_loop(it)
        for c in classes:
            d = align_distance(_as_loop(c.representative), L, subnode)
            if d <= tol:
                c.members += 1
                c.alignment_distance = max(c.alignment_distance, d)
                break
        else:
            classes.append(OrbitClass(it, 1, 0.0))
    return classes


# ---------------------------------------------------------------------------
# degree test on R x S^1


@dataclass
class DegreeReport:
    R: float
    tau: np.ndarray
    d_minus: np.ndarray
    d_plus: np.ndarray
    products: np.ndarray
    degree: int
    sign_change: bool
    h3_holds: bool
    inconclusive: bool
    tau_consistent: bool

    @property
    def passed(self) -> bool:
        return self.h3_holds and self.degree != 0 and not self.inconclusive

    def to_dict(self) -> dict:
        return {"R": self.R, "degree": self.degree, "sign_change": self.sign_change,
                "h3_holds": self.h3_holds, "inconclusive": self.inconclusive,
                "tau_consistent": self.tau_consistent, "passed": self.passed,
                "d_minus": self.d_minus.tolist(), "d_plus": self.d_plus.tolist()}


def degree_check_cylinder(form: PerturbationForm, R: float, samples: int = 16, M_q: int = 128,
                          zero_tol: float = 1e-12) -> DegreeReport:
    """Sign test of dGamma/dr at r = -R and r = +R over circles z_tau on S^1.

    In one dimension deg(Gamma', (-R, R), 0) = (sign Gamma'(R) - sign Gamma'(-R)) / 2.
    """
    if form.N != 1:
        raise ValueError("the degree test is implemented for R x S^1 only")
    if form.terms and not form.analytic:
        raise UnsupportedDerivative("degree test needs analytic profile derivatives")
    tau = np.arange(samples) / samples
    dm, dp = [], []
    for t in tau:
        c, s = math.cos(2 * math.pi * t), math.sin(2 * math.pi * t)
        p, q = np.array([c, s]), np.array([-s, c])
        dm.append(gamma_grad(CircleParam(-R, p, q), form, M_q)[0])
        dp.append(gamma_grad(CircleParam(R, p, q), form, M_q)[0])
    dm, dp = np.array(dm), np.array(dp)
    scale = 2 * math.pi**2 * max(form.block_norm_sum(), 1.0)
    inconclusive = bool(np.any(np.abs(dm) <= zero_tol * scale) or np.any(np.abs(dp) <= zero_tol * scale))
    if inconclusive:
        warnings.warn(f"dGamma/dr vanishes numerically at R={R}; degree test inconclusive", RuntimeWarning)
    degrees = ((np.sign(dp) - np.sign(dm)) / 2).astype(int)
    products = dm * dp
    consistent = bool(np.all(degrees == degrees[0]))
    if not consistent:
        warnings.warn("degree depends on tau; the cylinder should be homogeneous", RuntimeWarning)
    return DegreeReport(float(R), tau, dm, dp, products, int(degrees[0]),
                        bool(np.all(products < 0)), bool(np.all(products != 0)) and not inconclusive,
                        inconclusive, consistent)
