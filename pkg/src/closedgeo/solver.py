"""Refinement of candidate loops to certified critical points of the full discrete energy."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis
from . import loop as lp
from .loop import DiscreteLoop
from .metric import PerturbationForm, check_h1, check_h2
from .reduction import (CircleParam, DegeneracyError, DivergenceError, SearchConfig,
                        compute_w, find_gamma_critical_points, great_circle, spread_members,
                        unperturbed_level)


@dataclass
class RefineOptions:
    tol: float = 1e-9
    switch_tol: float = 1e-3
    max_descent: int = 200
    max_newton: int = 50
    kernel_rel_tol: float = 1e-7
    armijo: float = 1e-4
    shrink: float = 0.5
    bracket: float = 1.0
    trivial_fraction: float = 0.1
    spectrum: bool = True


@dataclass
class GeodesicCertificate:
    loop: DiscreteLoop
    energy: float
    residual: float
    eps: float
    spectrum: analysis.SpectrumSummary | None
    normal_form: dict
    trivial: bool
    bracket_ok: bool
    newton_steps: int
    descent_steps: int
    deflated: list = field(default_factory=list)
    descent_energies: list = field(default_factory=list)
    source: dict | None = None

    def to_dict(self) -> dict:
        return {
            "eps": self.eps, "energy": self.energy, "residual": self.residual,
            "trivial": self.trivial, "bracket_ok": self.bracket_ok,
            "newton_steps": self.newton_steps, "descent_steps": self.descent_steps,
            "deflated_kernel_dims": self.deflated,
            "spectrum": self.spectrum.to_dict() if self.spectrum else None,
            "o2_normal_form": self.normal_form,
            "source": self.source,
            "loop": self.loop.to_dict(),
        }


def normal_form(loop: DiscreteLoop) -> dict:
    """O(2)-invariant description plus the node-shift/reflection giving a canonical start.

    The canonical representative is the (shift, reflect) whose first two nodes,
    rounded to 8 decimals, are lexicographically smallest.
    """
    best = None
    for reflect in (False, True):
        for s in range(loop.M):
            a = lp.o2_act(loop, s, reflect)
            key = tuple(np.round(a.u[:2].reshape(-1), 8))
            if best is None or key < best[0]:
                best = (key, s, reflect)
    x = loop.x - loop.x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    plane = vt[:2].T @ vt[:2]
    return {"shift": best[1], "reflect": best[2], "r_mean": float(loop.r.mean()),
            "r_spread": float(np.ptp(loop.r)), "plane_projector": np.round(plane, 12).tolist()}


def distance_to_circle(loop: DiscreteLoop, param: CircleParam) -> float:
    """Largest node distance from the loop to the curve (param.r, z_{p,q}(t))."""
    P = param.plane
    px = loop.x @ P
    nrm = np.linalg.norm(px, axis=1, keepdims=True)
    foot = px / np.where(nrm > 0, nrm, 1.0)
    d2 = (loop.r - param.r) ** 2 + np.sum((loop.x - foot) ** 2, axis=1)
    return float(np.sqrt(d2.max()))


def _newton_step(loop, form, eps, rel_tol):
    Q, g, H = lp.tangent_hessian(loop, form, eps)
    lam, V = np.linalg.eigh(H)
    cut = rel_tol * np.max(np.abs(lam))
    keep = np.abs(lam) > cut
    coef = (V[:, keep].T @ g) / lam[keep]
    step = -(V[:, keep] @ coef)
    return lp.frame_field(Q, step), int((~keep).sum())


def refine(initial: DiscreteLoop, form: PerturbationForm, eps: float,
           options: RefineOptions | None = None) -> GeodesicCertificate:
    """Projected gradient descent down to ``switch_tol``, then deflated projected Newton."""
    opt = options or RefineOptions()
    loop = initial
    res = lp.residual_norm(loop, form, eps)
    energies = [lp.energy(loop, form, eps)]
    trace = [res]

    descent = 0
    if res > opt.switch_tol:
        lip = 4.0 * loop.M * (1.0 + abs(eps) * form.block_norm_sum())
        t = 1.0 / lip
        while descent < opt.max_descent and res > opt.switch_tol:
            d = lp.gradient(loop, form, eps)
            dd = float(np.sum(d.u**2))
            while t > 1e-14:
                trial = lp.retract(loop, d, -t)
                e1 = lp.energy(trial, form, eps)
                if e1 <= energies[-1] - opt.armijo * t * dd:
                    break
                t *= opt.shrink
            else:
                break
            loop = trial
            energies.append(e1)
            res = lp.residual_norm(loop, form, eps)
            trace.append(res)
            descent += 1
            t = min(2.0 * t, 16.0 / lip)

    newton = 0
    deflated = []
    while res > opt.tol:
        if newton >= opt.max_newton:
            raise DivergenceError(f"Newton did not reach {opt.tol:g} in {opt.max_newton} steps", res, trace)
        step, nk = _newton_step(loop, form, eps, opt.kernel_rel_tol)
        deflated.append(nk)
        scale = 1.0
        for _ in range(12):
            trial = lp.retract(loop, step, scale)
            r1 = lp.residual_norm(trial, form, eps)
            if r1 < res:
                break
            scale *= 0.5
        else:
            trial = lp.retract(loop, step)
            r1 = lp.residual_norm(trial, form, eps)
        if not math.isfinite(r1):
            raise DivergenceError("Newton produced non-finite residual", r1, trace)
        loop, res = trial, r1
        trace.append(res)
        newton += 1

    e = lp.energy(loop, form, eps)
    b = unperturbed_level(loop.M)
    spec = analysis.spectrum(loop, form, eps, opt.kernel_rel_tol) if opt.spectrum else None
    return GeodesicCertificate(
        loop=loop, energy=e, residual=lp.residual_norm(loop, form, eps), eps=float(eps),
        spectrum=spec, normal_form=normal_form(loop),
        trivial=e <= opt.trivial_fraction * b, bracket_ok=abs(e - b) <= opt.bracket,
        newton_steps=newton, descent_steps=descent, deflated=deflated,
        descent_energies=energies)


def continuation(param: CircleParam, form: PerturbationForm, eps_list, M: int = 256,
                 options: RefineOptions | None = None) -> list:
    """Follow a branch in eps, warm-starting each refinement from the previous loop.

    Stops at the first failure and returns the certificates obtained so far.
    """
    eps_list = [float(e) for e in eps_list]
    if eps_list != sorted(eps_list) or (eps_list and eps_list[0] < 0):
        raise ValueError("eps_list must be ascending and start at or above 0")
    loop = great_circle(param, M)
    out = []
    for eps in eps_list:
        try:
            cert = refine(loop, form, eps, options)
        except (DivergenceError, np.linalg.LinAlgError):
            break
        out.append(cert)
        loop = cert.loop
    return out


def branch_lipschitz(certs) -> float:
    """Largest |dE| / |d eps| between consecutive certificates of a branch."""
    c = 0.0
    for a, b in zip(certs, certs[1:]):
        if b.eps != a.eps:
            c = max(c, abs(b.energy - a.energy) / abs(b.eps - a.eps))
    return c


# ---------------------------------------------------------------------------
# multiplicity pipeline


@dataclass
class MultiplicityConfig:
    M: int = 256
    search: SearchConfig = field(default_factory=SearchConfig)
    refine: RefineOptions = field(default_factory=RefineOptions)
    dedup_tol: float | None = None
    eps_max: float = 0.05
    threads: int = 1
    family_samples: int = 4


@dataclass
class ExperimentReport:
    N: int
    eps: float
    target: int
    target_reason: str
    count: int
    status: str
    reduction: object
    certificates: list
    orbits: list
    evidence: list
    h1: object
    h2: object
    dedup_tol: float

    @property
    def min_pairwise_distance(self) -> float:
        reps = [o.representative.loop for o in self.orbits]
        best = math.inf
        for i in range(len(reps)):
            for j in range(i):
                best = min(best, analysis.align_distance(reps[i], reps[j]))
        return best

    def summary(self) -> dict:
        return {"N": self.N, "eps": self.eps, "count": self.count, "target": self.target,
                "target_reason": self.target_reason, "status": self.status,
                "dedup_tol": self.dedup_tol,
                "h1_passed": self.h1.passed, "h2_passed": self.h2.passed,
                "gamma_critical_points": len(self.reduction.critical_points),
                "nondegenerate_gamma_points": self.reduction.predicted_count,
                "degenerate_families": len(self.reduction.critical_points) - self.reduction.predicted_count}


def _pipeline_one(job, form, eps, cfg):
    cp, param = job
    entry = {"critical_point": cp.to_dict() if param is cp.param else
             {"family_of": cp.param.to_dict(), "param": param.to_dict(),
              "classification": cp.classification, "gamma": cp.value}}
    try:
        w = compute_w(param, form, eps, cfg.M, eps_max=cfg.eps_max)
        entry["w"] = w.to_dict()
        cert = refine(w.loop, form, eps, cfg.refine)
        cert.source = {"gamma_point": param.to_dict(), "classification": cp.classification}
        entry["certificate"] = {"energy": cert.energy, "residual": cert.residual,
                                "trivial": cert.trivial, "bracket_ok": cert.bracket_ok}
        return entry, cert
    except (DivergenceError, DegeneracyError, np.linalg.LinAlgError) as exc:
        entry["error"] = f"{type(exc).__name__}: {exc}"
        return entry, None


def multiplicity_experiment(form: PerturbationForm, eps: float,
                            config: MultiplicityConfig | None = None) -> ExperimentReport:
    """Gamma critical points -> w correction -> refinement -> O(2) dedup, with the evidence chain.

    Nondegenerate points of Gamma are refined one each. A degenerate point
    stands for a critical family; up to ``family_samples`` well-separated
    members found by the search are refined, and the certificates decide.
    """
    cfg = config or MultiplicityConfig()
    N = form.N
    h1 = check_h1(form, cfg.search.R_max)
    h2 = check_h2(form, min(5.0, cfg.search.R_max))
    if N == 1:
        target, reason = 1, "R x S^1 with a sign change of dGamma/dr: at least one"
    elif h2.passed:
        target, reason = 2 * N, "(h1)+(h2): at least 2N"
    else:
        target, reason = N, "(h1): at least N modulo O(2)"
    red = find_gamma_critical_points(form, cfg.search)
    tol = analysis.default_dedup_tol(cfg.M) if cfg.dedup_tol is None else cfg.dedup_tol
    jobs = []
    for cp in red.critical_points:
        if cp.classification == "degenerate":
            jobs += [(cp, m) for m in spread_members(cp.family or [cp.param], cfg.family_samples)]
        else:
            jobs.append((cp, cp.param))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(lambda j: _pipeline_one(j, form, eps, cfg), jobs))
    else:
        results = [_pipeline_one(j, form, eps, cfg) for j in jobs]
    evidence = [r[0] for r in results]
    certs = [r[1] for r in results if r[1] is not None]
    good = [c for c in certs if not c.trivial and c.bracket_ok]
    orbits = analysis.dedup(good, tol)
    if red.gamma_identically_zero or not red.critical_points:
        status = "degenerate"
    elif len(orbits) >= target:
        status = "ok"
    else:
        status = "below_bound"
    return ExperimentReport(N, float(eps), target, reason, len(orbits), status, red, certs,
                            orbits, evidence, h1, h2, tol)


def config_dict(cfg: MultiplicityConfig) -> dict:
    return asdict(cfg)
