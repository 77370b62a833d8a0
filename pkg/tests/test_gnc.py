"""Registration backend: duality oracle, corrector behavior, instances, PLY."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar
from scipy.spatial.transform import Rotation

from npc import engine, gnc
from npc.linalg import DegenerateSystem


def one_point_instance(dist=1.0, c_bar=1.0):
    return gnc.RegistrationInstance(
        source=np.zeros((1, 3)),
        target=np.array([[dist, 0.0, 0.0]]),
        inlier_mask=np.ones(1, bool),
        noise_sigma=0.0,
        c_bar=c_bar,
    )


def test_gm_value_examples():
    inst = one_point_instance(1.0, 1.0)
    tf = gnc.RigidTransform.identity()
    assert gnc.gm_homotopy_value(inst, tf, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert gnc.gm_homotopy_value(inst, tf, 1.0) == pytest.approx(0.5, abs=1e-12)
    inst2, gt = gnc.synth_registration(40, 0.0, 0.0, 3)
    for u in (0.0, 0.3, 1.0):
        assert gnc.gm_homotopy_value(inst2, gt, u) == pytest.approx(0.0, abs=1e-18)


def test_gm_value_is_least_squares_at_zero():
    inst, _ = gnc.synth_registration(30, 0.5, 0.02, 4)
    tf = gnc.RigidTransform.identity()
    r = gnc.residuals(inst, tf)
    assert gnc.gm_homotopy_value(inst, tf, 0.0) == pytest.approx(float(np.sum(r * r)), rel=1e-12)


def test_update_weights_examples():
    inst = one_point_instance(1.0, 1.0)
    tf = gnc.RigidTransform.identity()
    assert gnc.update_weights(inst, tf, 0.0)[0] == pytest.approx(1.0, abs=1e-15)
    assert gnc.update_weights(inst, tf, 1.0)[0] == pytest.approx(0.25, abs=1e-15)
    far = one_point_instance(1e9, 1.0)
    assert gnc.update_weights(far, tf, 0.5)[0] < 1e-12


def test_black_rangarajan_duality_grid():
    # min over w of [w r^2 + (1/u) cbar^2 (sqrt(w)-1)^2] must equal the GM
    # homotopy value, attained at the closed-form weight
    for r in (0.01, 0.1, 0.5, 1.0, 2.0, 5.0):
        for u in (0.01, 0.1, 0.5, 1.0):
            for c in (0.03, 0.5, 1.0, 2.0):
                def f(w):
                    return w * r**2 + (c**2 / u) * (np.sqrt(w) - 1.0) ** 2

                gm = c**2 * r**2 / (c**2 + u * r**2)
                w_star = (c**2 / (u * r**2 + c**2)) ** 2
                assert abs(f(w_star) - gm) < 1e-9
                res = minimize_scalar(f, bounds=(1e-15, 1.0), method="bounded", options={"xatol": 1e-14})
                assert f(w_star) <= res.fun + 1e-9
                # stationarity of the closed form
                h = 1e-7 * max(w_star, 1e-9)
                slope = (f(w_star + h) - f(max(w_star - h, 1e-16))) / (w_star + h - max(w_star - h, 1e-16))
                assert abs(slope) < 1e-4 * max(1.0, r**2)


@settings(max_examples=80, deadline=None)
@given(
    st.floats(1e-3, 10.0),
    st.floats(1e-3, 10.0),
    st.floats(0.01, 1.0),
    st.floats(0.01, 1.0),
    st.floats(0.05, 3.0),
)
def test_weight_monotonicity(r1, r2, u1, u2, c):
    def w(r, u):
        return (c**2 / (u * r**2 + c**2)) ** 2

    lo_r, hi_r = sorted((r1, r2))
    lo_u, hi_u = sorted((u1, u2))
    assert w(hi_r, u1) <= w(lo_r, u1) + 1e-15
    assert w(r1, hi_u) <= w(r1, lo_u) + 1e-15
    assert 0.0 < w(r1, u1) <= 1.0


def test_gn_step_zero_residuals():
    inst, gt = gnc.synth_registration(50, 0.0, 0.0, 5)
    step = gnc.gauss_newton_step(inst, gt, np.ones(50))
    assert np.max(np.abs(step)) <= 1e-9
    out = gnc.gauss_newton_correct_once(inst, gt, np.ones(50))
    np.testing.assert_allclose(out.params(), gt.params(), atol=1e-9)


def test_gn_contraction_from_small_perturbation():
    inst, gt = gnc.synth_registration(60, 0.0, 0.0, 6)
    tf = gnc.RigidTransform(gt.rotation + np.array([0.05, -0.03, 0.02]), gt.translation + 0.05)
    w = np.ones(60)
    crits = []
    for _ in range(5):
        step = gnc.gauss_newton_step(inst, tf, w)
        crits.append(np.max(np.abs(step)))
        tf = gnc.RigidTransform.from_params(tf.params() + step)
    assert all(crits[i + 1] < crits[i] for i in range(4))
    assert crits[-1] < 1e-8


def test_gn_all_zero_weights_degenerate():
    inst, gt = gnc.synth_registration(20, 0.0, 0.0, 7)
    with pytest.raises(DegenerateSystem):
        gnc.gauss_newton_step(inst, gt, np.zeros(20))


def test_synth_registration_contracts():
    inst, gt = gnc.synth_registration(100, 0.8, 0.01, 11)
    assert (~inst.inlier_mask).sum() == 80
    r = gnc.residuals(inst, gt)
    assert np.all(r[inst.inlier_mask] <= 3 * 0.01 + 1e-12)
    assert inst.c_bar == pytest.approx(0.03)
    inst2, _ = gnc.synth_registration(100, 0.8, 0.01, 11)
    np.testing.assert_array_equal(inst.target, inst2.target)
    clean, gt0 = gnc.synth_registration(25, 0.0, 0.0, 12)
    assert np.all(gnc.residuals(clean, gt0) < 1e-12)


def test_registration_errors_closed_forms():
    gt = gnc.RigidTransform(np.array([0.1, 0.2, -0.3]), np.array([1.0, 2.0, 3.0]))
    e_r, e_t = gnc.registration_errors(gt, gt)
    assert e_r == pytest.approx(0.0, abs=1e-12)
    assert e_t == 0.0
    quarter = gnc.RigidTransform(np.array([0.0, 0.0, np.pi / 2]), np.zeros(3))
    e_r, _ = gnc.registration_errors(quarter, gnc.RigidTransform.identity())
    assert e_r == pytest.approx(np.pi / 2, abs=1e-12)


def test_registration_errors_against_quaternion_oracle():
    rng = np.random.default_rng(13)
    for _ in range(30):
        a = gnc.RigidTransform(rng.uniform(-2, 2, 3), rng.standard_normal(3))
        b = gnc.RigidTransform(rng.uniform(-2, 2, 3), rng.standard_normal(3))
        e_r, e_t = gnc.registration_errors(a, b)
        qa = Rotation.from_matrix(a.matrix()).as_quat()
        qb = Rotation.from_matrix(b.matrix()).as_quat()
        oracle = 2.0 * np.arccos(np.clip(abs(np.dot(qa, qb)), -1.0, 1.0))
        assert abs(e_r - oracle) < 1e-10
        assert e_t == pytest.approx(np.linalg.norm(a.translation - b.translation))


@settings(max_examples=60, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4))
def test_axis_angle_canonicalization(x, y, z):
    w = np.array([x, y, z]) * np.pi
    c = gnc.canonicalize_axis_angle(w)
    assert np.linalg.norm(c) <= np.pi + 1e-12
    np.testing.assert_allclose(gnc.rotation_matrix(w), gnc.rotation_matrix(c), atol=1e-10)


def test_full_solve_separates_weights():
    inst, gt = gnc.synth_registration(100, 0.85, 0.01, np.random.default_rng(14))
    trace = engine.solve(
        gnc.RegistrationProblem(inst),
        engine.classic_controller("gnc"),
        engine.default_limits("gnc"),
        np.random.default_rng(15),
    )
    assert trace.success
    e_r, _ = gnc.registration_errors(trace.solution.transform, gt)
    assert np.degrees(e_r) < 5.0
    w = trace.solution.weights
    w_out = w[~inst.inlier_mask]
    w_in = w[inst.inlier_mask]
    assert np.all(w_out < 0.1)
    assert np.all(w_in > 0.15)
    assert w_in.min() > w_out.max()


def test_problem_predict_updates_weights():
    inst, _ = gnc.synth_registration(30, 0.5, 0.01, 16)
    prob = gnc.RegistrationProblem(inst)
    sol = prob.init_solution(np.random.default_rng(0))
    np.testing.assert_array_equal(sol.weights, np.ones(30))
    pred = prob.predict(sol, 0.0, 0.4)
    np.testing.assert_allclose(pred.weights, gnc.update_weights(inst, sol.transform, 0.4))


PLY_GOOD = """ply
format ascii 1.0
comment handcrafted
element vertex 3
property float x
property float y
property float z
end_header
0.0 0.0 0.0
1.0 2.0 3.0
-1.5 0.25 4.0
"""


def test_load_ply_good(tmp_path):
    p = tmp_path / "good.ply"
    p.write_text(PLY_GOOD)
    pts = gnc.load_ply(p)
    np.testing.assert_allclose(pts, [[0, 0, 0], [1, 2, 3], [-1.5, 0.25, 4.0]])


def test_load_ply_truncated(tmp_path):
    p = tmp_path / "short.ply"
    p.write_text(PLY_GOOD.replace("element vertex 3", "element vertex 4"))
    with pytest.raises(gnc.ParseError) as exc:
        gnc.load_ply(p)
    assert exc.value.line >= 8


def test_load_ply_binary_rejected(tmp_path):
    p = tmp_path / "bin.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(gnc.UnsupportedFormat):
        gnc.load_ply(p)


def test_load_ply_bad_property_type(tmp_path):
    p = tmp_path / "badprop.ply"
    p.write_text(PLY_GOOD.replace("property float x", "property int x"))
    with pytest.raises(gnc.ParseError) as exc:
        gnc.load_ply(p)
    assert exc.value.line == 5


def test_load_ply_bad_row(tmp_path):
    p = tmp_path / "badrow.ply"
    p.write_text(PLY_GOOD.replace("1.0 2.0 3.0", "1.0 2.0 3.0 9.0"))
    with pytest.raises(gnc.ParseError) as exc:
        gnc.load_ply(p)
    assert exc.value.line == 10
