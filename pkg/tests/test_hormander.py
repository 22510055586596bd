import numpy as np
import pytest

from hypofk.exprlang import Const, ExprDomainError, eval_expr, parse, to_string
from hypofk.fields import VectorField
from hypofk.hormander import generate_basis, lie_bracket, rank_at
from hypofk.paths import CutoffSpec, make_slowed_spec
from hypofk.presets import embedded_bm, langevin
from hypofk.sle import SLEConfig, sle_spec


def _vf(*sources, n):
    return VectorField(tuple(parse(s, n) for s in sources))


def test_bracket_langevin_example():
    # [d_2, x2 d_1] = d_1
    v = _vf("0", "1", n=2)
    w = _vf("x2", "0", n=2)
    br = lie_bracket(v, w)
    assert [to_string(c) for c in br.coeffs] == ["1.0", "0.0"]


def test_bracket_of_field_with_itself_vanishes():
    v = _vf("x2*x2", "sin(x1)", n=2)
    assert lie_bracket(v, v).is_zero()


def test_bracket_sle_example(rng):
    # [sqrt(k) d_1, 2/(x2-x1) d_2] = sqrt(k) * 2/(x2-x1)^2 d_2
    k = 2.0
    v = VectorField((Const(np.sqrt(k)), Const(0.0)))
    w = _vf("0", "2/(x2-x1)", n=2)
    br = lie_bracket(v, w)
    assert br.coeffs[0] == Const(0.0)
    for _ in range(20):
        x = rng.uniform(-2, 2, size=2)
        if x[1] - x[0] < 0.3:
            continue
        want = np.sqrt(k) * 2.0 / (x[1] - x[0]) ** 2
        assert abs(eval_expr(br.coeffs[1], x) - want) < 1e-12


def test_bracket_dimension_mismatch():
    with pytest.raises(ValueError):
        lie_bracket(_vf("x1", n=1), _vf("x1", "x2", n=2))


def test_antisymmetry_at_random_points(rng):
    v = _vf("x2*x2", "sin(x1)*x2", n=2)
    w = _vf("exp(x1/4)", "x1 - x2", n=2)
    vw = lie_bracket(v, w)
    wv = lie_bracket(w, v)
    for _ in range(100):
        x = rng.uniform(-2, 2, size=2)
        s = vw.eval_at(x) + wv.eval_at(x)
        assert np.max(np.abs(s)) <= 1e-10


def test_jacobi_identity_at_random_points(rng):
    u = _vf("x2", "x1*x1", n=2)
    v = _vf("sin(x2)", "1", n=2)
    w = _vf("x1*x2", "cos(x1)", n=2)
    term1 = lie_bracket(u, lie_bracket(v, w))
    term2 = lie_bracket(v, lie_bracket(w, u))
    term3 = lie_bracket(w, lie_bracket(u, v))
    for _ in range(100):
        x = rng.uniform(-1.5, 1.5, size=2)
        s = term1.eval_at(x) + term2.eval_at(x) + term3.eval_at(x)
        assert np.max(np.abs(s)) <= 1e-10


def test_generate_basis_embedded_bm():
    for depth in (0, 1, 3):
        basis = generate_basis(embedded_bm(), depth)
        assert len(basis.entries) == 1
        assert [to_string(c) for c in basis.fields[0].coeffs] == ["1.0", "0.0"]


def test_generate_basis_langevin_depth0():
    basis = generate_basis(langevin(), 0)
    words = [w for _, w in basis.entries]
    assert words == ["U1", "[U1,U0]"]
    rep = rank_at(basis, (0.0, 0.0))
    assert rep.rank == 2 and rep.satisfied


def test_generate_basis_sle3_coefficient_orders(rng):
    # depth-1 basis contains fields scaling like gap^-2 and gap^-3
    spec = sle_spec(SLEConfig(kappa=2.0, x0=(0.0, 1.0, 2.0)))
    basis = generate_basis(spec, 1)
    x1 = np.array([0.0, 1.0, 2.0])
    x2 = np.array([0.0, 2.0, 4.0])  # gaps doubled
    orders = set()
    for f in basis.fields:
        v1, v2 = f.eval_at(x1), f.eval_at(x2)
        for i in range(3):
            if abs(v1[i]) > 1e-12 and abs(v2[i]) > 1e-12:
                ratio = v1[i] / v2[i]
                orders.add(round(np.log2(abs(ratio))))
    assert {2, 3} <= orders


def test_rank_embedded_bm_fails():
    basis = generate_basis(embedded_bm(), 3)
    rep = rank_at(basis, (0.3, -0.7))
    assert rep.rank == 1
    assert not rep.satisfied


def test_rank_sle3_full():
    spec = sle_spec(SLEConfig(kappa=2.0, x0=(0.0, 1.0, 2.0)))
    basis = generate_basis(spec, 2)
    rep = rank_at(basis, (0.0, 1.0, 2.0))
    assert rep.rank == 3 and rep.satisfied
    assert list(rep.singular_values) == sorted(rep.singular_values, reverse=True)


def test_rank_collision_point_raises():
    spec = sle_spec(SLEConfig(kappa=2.0, x0=(0.0, 1.0, 2.0)))
    basis = generate_basis(spec, 1)
    # a coordinate colliding with the driving point makes the drift singular
    with pytest.raises(ExprDomainError):
        rank_at(basis, (0.0, 1.0, 0.0))


def test_rank_monotone_in_depth(rng):
    spec = sle_spec(SLEConfig(kappa=6.0, x0=(0.0, 1.0, 3.0)))
    pts = [(0.0, 1.0, 3.0), (-1.0, 0.5, 2.0)]
    prev = {p: 0 for p in pts}
    for depth in (0, 1, 2):
        basis = generate_basis(spec, depth)
        for p in pts:
            r = rank_at(basis, p).rank
            assert r >= prev[p]
            prev[p] = r


def test_cutoff_invariance_of_rank():
    # slowing the diffusion down inside a cutoff leaves the Lie-algebra rank
    # unchanged wherever theta == 1
    for spec, pts, expect in (
        (langevin(), [(0.0, 0.0), (0.2, -0.1)], 2),
        (embedded_bm(), [(0.0, 0.0)], 1),
    ):
        cut = CutoffSpec.box((-1.0, -1.0), (1.0, 1.0), margin=0.3)
        slowed = make_slowed_spec(spec, cut)
        for depth in (0, 1):
            b0 = generate_basis(spec, depth)
            b1 = generate_basis(slowed, depth)
            for p in pts:
                r0 = rank_at(b0, p).rank
                r1 = rank_at(b1, p).rank
                assert r0 == r1 == (expect if depth >= 0 else r0)


def test_rank_report_fields():
    basis = generate_basis(langevin(), 0)
    rep = rank_at(basis, (1.0, 2.0), tol=1e-9)
    assert rep.point == (1.0, 2.0)
    assert rep.depth == 0
    assert rep.rank <= min(2, len(basis.entries))
    assert rep.satisfied == (rep.rank == 2)
