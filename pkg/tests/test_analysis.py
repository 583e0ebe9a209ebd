import math
import warnings

import numpy as np
import pytest

from closedgeo import loop as lp
from closedgeo.analysis import (NotCriticalError, align, align_distance, dedup,
                                degree_check_cylinder, jacobi_form_unit_sphere, nondegeneracy_check,
                                normal_mode, spectrum, summarize_spectrum)
from closedgeo.loop import DiscreteLoop
from closedgeo.metric import Gaussian, PerturbationForm, builtin_form
from closedgeo.reduction import CircleParam, great_circle

ZERO2 = PerturbationForm.zero(2)


def _plane_circle(i, j, M=64, r=0.0):
    e = np.eye(3)
    return great_circle(CircleParam(r, e[i], e[j]), M)


def test_spectrum_great_circle_s2():
    s = spectrum(great_circle(CircleParam.standard(2), 128), ZERO2, 0.0)
    assert s.kernel_dim == 4 and s.morse_index == 1 and s.reliable
    assert s.kernel_dim + s.morse_index + s.positive == 128 * 3


def test_spectrum_constant_loop():
    c = DiscreteLoop.constant(32, 0.0, np.array([0.0, 0.0, 1.0]))
    s = spectrum(c, ZERO2, 0.0)
    assert s.morse_index == 0
    # constant loops: translations in r and along the sphere
    assert s.kernel_dim == 3


def test_spectrum_o2_invariant():
    rng = np.random.default_rng(2)
    L = lp.random_loop(24, 2, rng)
    form = builtin_form("odd_decay_aniso", 2)
    a = spectrum(L, form, 0.05).eigenvalues
    b = spectrum(lp.o2_act(L, 5, True), form, 0.05).eigenvalues
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_summarize_flags_ambiguous_gap():
    s = summarize_spectrum([-1.0, 5e-8, 2e-7, 1.0])
    assert not s.reliable
    assert s.kernel_dim + s.morse_index + s.positive == 4


def test_jacobi_oracle_matches_discrete_hessian():
    prm = CircleParam.standard(2)
    M = 256
    t = np.arange(M) / M
    z = great_circle(prm, M)
    H = lp.hessian(z, ZERO2, 0.0)
    e = np.array([0.0, 0.0, 1.0])
    zdot = 2 * math.pi * (np.outer(-np.sin(2 * math.pi * t), prm.p) + np.outer(np.cos(2 * math.pi * t), prm.q))
    for k in (2, 3):
        y = np.outer(np.sin(2 * math.pi * k * t), e)
        ydot = np.outer(2 * math.pi * k * np.cos(2 * math.pi * k * t), e)
        ref = jacobi_form_unit_sphere(zdot, y, ydot)
        assert ref == pytest.approx(2 * math.pi**2 * (k * k - 1), rel=1e-12)
        v = normal_mode(prm, M, k).u.reshape(-1)
        assert v @ H @ v == pytest.approx(ref, rel=0.02)


def test_nondegeneracy_great_circle_s2():
    res = nondegeneracy_check(great_circle(CircleParam.standard(2), 64))
    assert res.kernel_dim == 3 and not res.nondegenerate


def test_nondegeneracy_s1():
    res = nondegeneracy_check(great_circle(CircleParam.standard(1), 64))
    assert res.kernel_dim == 1 and res.nondegenerate


def test_nondegeneracy_doubled_circle():
    res = nondegeneracy_check(great_circle(CircleParam.standard(2), 64, winding=2))
    assert res.kernel_dim > 1 and not res.nondegenerate


def test_nondegeneracy_rejects_noncritical():
    L = lp.random_loop(32, 2, np.random.default_rng(0))
    with pytest.raises(NotCriticalError):
        nondegeneracy_check(L)


def test_align_recovers_shift():
    L = lp.random_loop(40, 2, np.random.default_rng(1))
    s, refl, d = align(L, lp.o2_act(L, 13))
    assert (s, refl, d) == (13, False, 0.0)
    assert align(L, L) == (0, False, 0.0)


def test_align_reflection():
    L = lp.random_loop(40, 2, np.random.default_rng(1))
    s, refl, d = align(L, lp.o2_act(L, 7, True))
    assert refl and d == 0.0


def test_align_mismatch():
    with pytest.raises(ValueError):
        align(lp.random_loop(16, 2, np.random.default_rng(0)), lp.random_loop(20, 2, np.random.default_rng(0)))


def test_align_orthogonal_planes_bounded_below():
    a, b = _plane_circle(0, 1), _plane_circle(0, 2)
    # brute-force oracle over all shifts and reflections
    best = min(np.sqrt(np.mean(np.sum((lp.o2_act(a, s, f).u - b.u) ** 2, axis=1)))
               for s in range(64) for f in (False, True))
    _, _, d = align(a, b)
    assert d == pytest.approx(best, rel=1e-14)
    assert d >= 0.5


def test_align_symmetric():
    rng = np.random.default_rng(4)
    a, b = lp.random_loop(30, 2, rng), lp.random_loop(30, 2, rng)
    assert abs(align(a, b)[2] - align(b, a)[2]) <= 1e-13
    assert abs(align_distance(a, b) - align_distance(b, a)) <= 1e-8


def test_dedup_shifted_copies():
    L = lp.random_loop(16, 2, np.random.default_rng(3))
    classes = dedup([lp.o2_act(L, s) for s in range(16)])
    assert len(classes) == 1 and classes[0].members == 16


def test_dedup_orthogonal_planes():
    assert len(dedup([_plane_circle(0, 1), _plane_circle(1, 2)])) == 2


def test_dedup_empty():
    assert dedup([]) == []


def test_dedup_idempotent():
    rng = np.random.default_rng(5)
    base = [lp.random_loop(16, 2, rng) for _ in range(3)]
    items = base + [lp.o2_act(b, 3, True) for b in base]
    classes = dedup(items)
    assert len(classes) == 3
    assert len(dedup([c.representative for c in classes])) == 3


def test_dedup_subnode_phase():
    # same circle started at a phase between nodes
    M = 64
    a = _plane_circle(0, 1, M)
    t = (np.arange(M) + 0.37) / M
    x = np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t), np.zeros(M)])
    b = DiscreteLoop(np.zeros(M), x)
    assert align(a, b)[2] > 1e-2
    assert align_distance(a, b) <= 1e-8
    assert len(dedup([a, b])) == 1


def test_degree_gaussian_center():
    rep = degree_check_cylinder(builtin_form("gaussian", 1), 1.0)
    # d/dr exp(-r^2) is +2/e at r = -1 and -2/e at r = +1
    assert rep.sign_change and rep.degree == -1 and rep.passed and rep.tau_consistent
    np.testing.assert_allclose(rep.d_plus, 2 * math.pi**2 * Gaussian(0, 1).d1(1.0), rtol=1e-12)


def test_degree_shifted_gaussian():
    form = PerturbationForm.single(Gaussian(2.0, 1.0), np.eye(3))
    rep = degree_check_cylinder(form, 1.0)
    assert np.all(rep.products > 0) and rep.degree == 0 and not rep.passed


def test_degree_zero_form_inconclusive():
    with pytest.warns(RuntimeWarning):
        rep = degree_check_cylinder(PerturbationForm.zero(1), 1.0)
    assert rep.inconclusive and not rep.passed


def test_degree_far_out_inconclusive():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = degree_check_cylinder(builtin_form("gaussian", 1), 40.0)
    assert rep.inconclusive and any("inconclusive" in str(x.message) for x in w)


def test_degree_needs_cylinder():
    with pytest.raises(ValueError):
        degree_check_cylinder(builtin_form("gaussian", 2), 1.0)
