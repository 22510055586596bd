import numpy as np
import pytest

from hypofk.exprlang import Const, TruePredicate, Var, eval_expr, parse, simplify, to_string
from hypofk.fields import (
    DiffusionSpec,
    VectorField,
    apply_G,
    apply_G_dual,
    check_generator_identity,
    make_U,
    psd_spot_check,
)
from hypofk.presets import bm_interval, embedded_bm, langevin
from hypofk.sle import SLEConfig, sle_spec
from hypofk.verify import bump_space, duality_gap


def test_spec_validation():
    with pytest.raises(ValueError, match="sigma must be"):
        DiffusionSpec(n=2, d=1, sigma=((Const(1.0),),), drift=(Const(0.0), Const(0.0)))
    with pytest.raises(ValueError, match="time-homogeneous"):
        DiffusionSpec(n=1, d=1, sigma=((parse("t", 1),),), drift=(Const(0.0),))
    with pytest.raises(ValueError, match="beyond"):
        DiffusionSpec(n=1, d=1, sigma=((Const(1.0),),), drift=(parse("x1", 1),),
                      domain=TruePredicate()).__class__(
            n=1, d=1, sigma=((Const(1.0),),), drift=(Var(2),))


def test_make_U_langevin():
    spec = langevin()
    u1 = make_U(spec, 1)
    u0 = make_U(spec, 0)
    assert [to_string(c) for c in u1.coeffs] == ["0.0", "1.0"]
    assert [to_string(c) for c in u0.coeffs] == ["x2", "0.0"]


def test_make_U_embedded_bm():
    spec = embedded_bm()
    assert [to_string(c) for c in make_U(spec, 1).coeffs] == ["1.0", "0.0"]
    assert make_U(spec, 0).is_zero()


def test_make_U_sle():
    cfg = SLEConfig(kappa=4.0, x0=(0.0, 1.0))
    spec = sle_spec(cfg)
    u1 = make_U(spec, 1)
    u0 = make_U(spec, 0)
    assert abs(eval_expr(u1.coeffs[0], (0.0, 1.0)) - 2.0) < 1e-15  # sqrt(4)
    assert eval_expr(u1.coeffs[1], (0.0, 1.0)) == 0.0
    # sigma constant: no Ito correction, so U_0 = drift
    for x in [(0.0, 1.0), (0.5, 3.0)]:
        assert eval_expr(u0.coeffs[0], x) == 0.0
        assert abs(eval_expr(u0.coeffs[1], x) - 2.0 / (x[1] - x[0])) < 1e-15


def test_make_U_index_errors():
    with pytest.raises(ValueError):
        make_U(langevin(), 2)
    with pytest.raises(ValueError):
        make_U(langevin(), -1)


def test_apply_G_bm_examples(bm):
    assert simplify(apply_G(bm, parse("x1*x1", 1))) == Const(1.0)
    assert simplify(apply_G(bm, parse("1 - x1*x1", 1))) == Const(-1.0)
    assert simplify(apply_G(bm, Const(7.5))) == Const(0.0)


def test_apply_G_is_linear(bm, rng):
    f = parse("cosh(x1) + x1*x1", 1)
    g = parse("sin(x1)*x1", 1)
    combo = parse("2*(cosh(x1) + x1*x1) - 3*(sin(x1)*x1)", 1)
    lhs = apply_G(bm, combo)
    for _ in range(20):
        x = (float(rng.uniform(-1, 1)),)
        want = 2 * eval_expr(apply_G(bm, f), x) - 3 * eval_expr(apply_G(bm, g), x)
        assert abs(eval_expr(lhs, x) - want) < 1e-12


def test_apply_G_dual_bm(bm):
    assert simplify(apply_G_dual(bm, parse("x1*x1", 1))) == Const(1.0)


def test_dual_is_G_with_negated_drift_for_constant_coeffs(rng):
    # constant sigma and b: G* f = (1/2) a f'' - b f'
    spec = DiffusionSpec(n=1, d=1, sigma=((Const(1.5),),), drift=(Const(0.7),))
    spec_neg = DiffusionSpec(n=1, d=1, sigma=((Const(1.5),),), drift=(Const(-0.7),))
    f = parse("sin(x1) + x1*x1*x1", 1)
    d1 = apply_G_dual(spec, f)
    d2 = apply_G(spec_neg, f)
    for _ in range(25):
        x = (float(rng.uniform(-2, 2)),)
        assert abs(eval_expr(d1, x) - eval_expr(d2, x)) < 1e-12


def test_duality_quadrature_random_polynomial_spec():
    # non-constant smooth coefficients
    spec = DiffusionSpec(
        n=1, d=1,
        sigma=((parse("1 + 0.3*x1*x1", 1),),),
        drift=(parse("0.5*x1 - 0.2", 1),),
    )
    phi = bump_space([0.1], [0.55])
    psi = bump_space([-0.2], [0.6])
    gap = duality_gap(spec, phi, psi, [-1.0], [1.0], nodes=1025)
    assert gap <= 1e-6


def test_duality_quadrature_every_preset(all_presets):
    for name, spec in all_presets.items():
        if spec.n == 1:
            phi = bump_space([0.0], [0.5])
            psi = bump_space([0.15], [0.5])
            gap = duality_gap(spec, phi, psi, [-1.0], [1.0], nodes=1025)
        else:
            phi = bump_space([0.0, 0.0], [0.6, 0.6])
            psi = bump_space([0.1, -0.1], [0.6, 0.6])
            gap = duality_gap(spec, phi, psi, [-1.0, -1.0], [1.0, 1.0], nodes=257)
        assert gap <= 1e-6, name


def test_duality_quadrature_sle():
    spec = sle_spec(SLEConfig(kappa=2.0, x0=(0.0, 2.0)))
    phi = bump_space([0.0, 2.0], [0.4, 0.4])
    psi = bump_space([0.1, 2.1], [0.4, 0.4])
    gap = duality_gap(spec, phi, psi, [-0.5, 1.5], [0.5, 2.5], nodes=257)
    assert gap <= 1e-6


def test_dual_integrates_to_zero_against_one(all_presets):
    # integral of G* f over a box vanishes for f compactly supported inside
    spec = all_presets["bm_interval"]
    f = bump_space([0.0], [0.5])
    gap = duality_gap(spec, f, Const(1.0), [-1.0], [1.0], nodes=1025)
    # G(1) = 0 so the lhs integral is 0; the gap equals |integral f G* 1 ... |
    assert gap <= 1e-8


def test_generator_identity_langevin():
    dev = check_generator_identity(langevin(), parse("x1*x2", 2),
                                   [(0.3, 0.7), (1.0, 2.0), (-1.5, 0.4)])
    assert dev <= 1e-12


def test_generator_identity_bm_cosh(bm):
    dev = check_generator_identity(bm, parse("cosh(x1)", 1), [(0.0,), (0.5,), (-0.9,)])
    assert dev <= 1e-12


def test_generator_identity_sle3(rng):
    spec = sle_spec(SLEConfig(kappa=8.0 / 3.0, x0=(0.0, 1.0, 2.0)))
    pts = []
    while len(pts) < 100:
        x = np.sort(rng.uniform(-3, 3, size=3))
        if min(x[1] - x[0], x[2] - x[1]) > 0.2:
            pts.append(x)
    dev = check_generator_identity(spec, parse("x2 - x1", 3), pts)
    assert dev <= 1e-10


def test_psd_spot_check(all_presets, rng):
    for name, spec in all_presets.items():
        pts = rng.uniform(-2, 2, size=(1000, spec.n))
        assert psd_spot_check(spec, pts) >= -1e-10, name


def test_psd_spot_check_sle(rng):
    spec = sle_spec(SLEConfig(kappa=6.0, x0=(0.0, 1.0)))
    pts = []
    while len(pts) < 1000:
        x = rng.uniform(-3, 3, size=2)
        if x[1] - x[0] > 0.1:
            pts.append(x)
    assert psd_spot_check(spec, pts) >= -1e-10


def test_vector_field_applies_to_coordinates():
    vf = VectorField((parse("x2", 2), parse("x1*x1", 2)))
    # applying to coordinate x_j returns the j-th coefficient
    assert simplify(vf.apply(Var(1))) == Var(2)
    got = simplify(vf.apply(Var(2)))
    for x in [(0.5, 2.0), (-1.0, 3.0)]:
        assert eval_expr(got, x) == x[0] * x[0]
