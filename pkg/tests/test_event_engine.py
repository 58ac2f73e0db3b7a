import math

import numpy as np
import pytest

from etcbf.acc import AccParams, AccScenario, acc_synchronize, make_model
from etcbf.cbf_core import ClassK, ControlBounds, LinearRow, clf_row
from etcbf.event_engine import (
    AdaptiveModel,
    EmptyFeasibleBoxError,
    ErrorState,
    EventBounds,
    LimitValues,
    LoopConfig,
    QpInfeasibleError,
    RobustHocbf,
    RobustTerm,
    Trigger,
    build_event_qp,
    compute_error,
    detect_event,
    joint_box,
    limit_values_high,
    limit_values_rd1,
    relative_degree_one_terms,
    robust_constraint_row,
    run_event_loop,
    solve_event_qp,
    synchronize,
)
from etcbf.plant import Measurement
from etcbf.qp import solve, verify_kkt
from etcbf.toy import ToyParams, ToyScenario


def scalar_model(drift, state):
    return AdaptiveModel(lambda x: drift(x), lambda x: np.ones((1, 1)), np.array([state]))


def rd1_identity(model):
    return relative_degree_one_terms(lambda x: float(x[0]), lambda x: np.array([1.0]), model,
                                     ClassK.identity())


# ---------------------------------------------------------------- errors


def test_error_zero_after_synchronize():
    model = scalar_model(lambda x: np.zeros(1), 0.3)
    meas = Measurement(1.0, np.array([0.7]), (np.array([0.25]),))
    synced = synchronize(model, meas, np.array([0.1]))
    err = compute_error(meas, synced, np.array([0.1]))
    assert err.e[0] == 0.0
    # the drift correction absorbs the derivative error
    assert err.derivatives[0][0] == pytest.approx(0.0, abs=1e-15)


def test_perfect_model_has_zero_error_derivatives():
    model = scalar_model(lambda x: -x, 2.0)
    u = np.array([0.5])
    meas = Measurement(0.0, np.array([2.0]), (np.array([-2.0 + 0.5]),))
    err = compute_error(meas, model, u)
    assert err.e[0] == 0.0 and err.derivatives[0][0] == 0.0


def test_compute_error_dimension_mismatch():
    model = scalar_model(lambda x: np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        compute_error(Measurement(0.0, np.zeros(2), (np.zeros(2),)), model, np.zeros(1))


def test_acc_edot_formula_at_event():
    p = AccParams()
    model = make_model(p, h1=0.01, h2=-0.3)
    model.state = np.array([18.0, 60.0])
    zdot = -4.0
    meas = Measurement(0.0, np.array([18.0, 60.0]), (np.array([0.0, zdot]), np.array([0.0, 0.0])))
    err = compute_error(meas, model, np.zeros(1))
    assert err.derivatives[0][1] == pytest.approx(zdot - (-0.3 + p.v_p - 18.0))


def test_bounds_validation():
    with pytest.raises(ValueError):
        EventBounds([0.0], ([1.0],), [1.0])
    with pytest.raises(ValueError):
        EventBounds([1.0], ([1.0],), [math.inf])
    with pytest.raises(ValueError):
        LimitValues(0.0, math.nan, 0.0, 0.0, [1.0])


# ---------------------------------------------------------------- limit values


def test_rd1_drift_min_on_interval():
    model = scalar_model(lambda x: -x, 1.5)
    bounds = EventBounds([0.1], ([0.1],), [0.5])  # S = [1, 2]
    lv = limit_values_rd1(rd1_identity(model), model.state, bounds, 1.0)
    assert lv.b_f_min == pytest.approx(-2.0)


def test_rd1_alpha_min_at_corner():
    model = scalar_model(lambda x: -x, 1.5)
    bounds = EventBounds([0.1], ([0.1],), [0.5])
    lv = limit_values_rd1(rd1_identity(model), model.state, bounds, 1.0)
    assert lv.b_alpha_min == pytest.approx(0.9)
    assert lv.b_e_min == pytest.approx(-0.1)
    assert lv.b_R_min == 0.0


def test_rd1_constant_drift_independent_of_box():
    model = scalar_model(lambda x: np.full_like(np.asarray(x, float), 0.37), 5.0)
    for s in (0.1, 1.0, 3.0):
        lv = limit_values_rd1(rd1_identity(model), model.state, EventBounds([0.1], ([0.1],), [s]), 1.0)
        assert lv.b_f_min == pytest.approx(0.37)
        # control coefficient is constant: exact, no grid error
        assert lv.b_g_lim[0] == 1.0


def test_rd1_empty_box():
    model = scalar_model(lambda x: -x, -3.0)
    with pytest.raises(EmptyFeasibleBoxError):
        limit_values_rd1(rd1_identity(model), model.state, EventBounds([0.1], ([0.1],), [0.5]), 1.0)


def test_control_limit_follows_sign():
    # coefficient 1 + y varies over the box: min for u >= 0, max for u < 0
    terms = (RobustTerm("control", lambda y: 1.0 + y[0], (0,)),)
    robust = RobustHocbf(1, 1, 1, terms)
    bounds = EventBounds([0.1], ([0.1],), [0.5])
    assert limit_values_rd1(robust, [2.0], bounds, 1.0).b_g_lim[0] == pytest.approx(2.5)
    assert limit_values_rd1(robust, [2.0], bounds, -1.0).b_g_lim[0] == pytest.approx(3.5)


def test_term_on_unmonitored_coordinate_rejected():
    terms = (RobustTerm("error", lambda y: y[1], (1,)),)
    robust = RobustHocbf(1, 1, 1, terms)
    with pytest.raises(ValueError):
        limit_values_rd1(robust, [0.0], EventBounds([math.inf], ([1.0],), [1.0]), 1.0)


def test_degenerate_box_gives_point_values():
    p = AccParams()
    model = make_model(p, 0.02, -0.5)
    model.state = np.array([18.0, 40.0])
    tiny = 1e-12
    bounds = EventBounds([math.inf, tiny], ([math.inf, tiny], [math.inf, tiny]), [tiny, tiny])
    robust = AccScenario(p).robust_hocbf(model)
    lv = limit_values_high(robust, model.state, bounds, 1.0)
    point = robust.evaluate(np.r_[model.state, np.zeros(6)])
    assert lv.b_f_min == pytest.approx(point["drift"], abs=1e-9)
    assert lv.b_R_min == pytest.approx(point["remainder"], abs=1e-9)
    assert lv.b_alpha_min == pytest.approx(point["alpha"], abs=1e-9)
    assert lv.b_e_min == pytest.approx(0.0, abs=1e-9)
    assert lv.b_g_lim[0] == -1.0 / p.M


def test_joint_box_layout():
    bounds = EventBounds([math.inf, 1.0], ([math.inf, 0.5], [math.inf, 0.2]), [0.4, 0.5])
    box = joint_box([20.0, 100.0], bounds, 2)
    np.testing.assert_allclose(box.lower, [19.6, 99.5, 0, -1, 0, -0.5, 0, -0.2])
    np.testing.assert_allclose(box.upper, [20.4, 100.5, 0, 1, 0, 0.5, 0, 0.2])


# ---------------------------------------------------------------- rows and QP


def test_zero_limit_values_row_trivial():
    row = robust_constraint_row(LimitValues(0.0, 0.0, 0.0, 0.0, [0.0]))
    assert row.value([123.0]) == 0.0 and row.delta_coeff == 0.0


def test_row_rearranges_to_upper_bound_on_u():
    M, c = 1650.0, 0.37
    row = robust_constraint_row(LimitValues(c, 0.0, 0.0, 0.0, [-1.0 / M]))
    assert row.value([M * c]) == pytest.approx(0.0, abs=1e-12)
    assert row.value([M * c - 1]) > 0 > row.value([M * c + 1])


def test_qp_origin_when_nothing_binds():
    bounds = ControlBounds([-5.0], [5.0])
    clf = LinearRow([0.0], 0.0, 1.0)
    sol = solve(build_event_qp(LinearRow([1.0], 10.0), clf, bounds, 1.0))
    np.testing.assert_allclose(sol.optimizer, [0.0, 0.0], atol=1e-12)


def test_qp_binding_cbf_row():
    bounds = ControlBounds([-5.0], [5.0])
    # -u - 3 >= 0  ->  u <= -3
    sol = solve(build_event_qp(LinearRow([-1.0], -3.0), None, bounds, 1.0))
    assert sol.optimizer[0] == pytest.approx(-3.0)


def test_qp_hessian_layout():
    prob = build_event_qp(LinearRow([1.0, 2.0], 0.0), None, ControlBounds([-1, -1], [1, 1]), 3.0)
    np.testing.assert_array_equal(np.diag(prob.hessian), [2.0, 2.0, 6.0])
    assert prob.box_lower[-1] == -np.inf and prob.box_upper[-1] == np.inf


def test_acc_initial_qp_kkt():
    sc = AccScenario()
    model = sc.make_model()
    plant = sc.make_plant(0)
    from etcbf.plant import sample_sensor

    meas = sample_sensor(plant, sc.sensor, np.zeros(1))
    model = sc.synchronize(model, meas, np.zeros(1))
    lv = sc.limit_values(model, 1.0)
    row = robust_constraint_row(lv)
    prob = build_event_qp(row, clf_row(sc.clf, model.dynamics, model.state), sc.control_bounds, 1.0)
    sol = solve(prob)
    assert sol.ok and verify_kkt(prob, sol).ok
    assert row.value(sol.optimizer[:-1]) >= -1e-9


def test_sign_flip_resolves_once():
    # coefficient 1 + y over y in [-2, 0]: negative branch changes b_g_lim, so a flip is re-solved
    terms = (
        RobustTerm("control", lambda y: 1.0 + y[0], (0,)),
        RobustTerm("alpha", lambda y: np.asarray(-1.0), ()),
    )

    class Sc:
        control_bounds = ControlBounds([-5.0], [5.0])
        bounds = EventBounds([0.1], ([0.1],), [1.0])

        class clf:
            relax_weight = 1.0
            target = np.zeros(1)
            epsilon = 1.0
            weights = np.zeros(1)

            @staticmethod
            def gradient(x):
                return np.zeros(1)

            @staticmethod
            def value(x):
                return 0.0

        def limit_values(self, model, u_sign, grid=21):
            return limit_values_rd1(RobustHocbf(1, 1, 1, terms), model.state, self.bounds, u_sign, grid)

    model = scalar_model(lambda x: np.zeros(1), -1.0)
    lv, row, sol, violated = solve_event_qp(Sc(), model, np.array([1.0]), LoopConfig())
    # first pass (min branch, coefficient -1) gives u = -1; the re-solve uses the max branch
    assert violated
    np.testing.assert_allclose(lv.b_g_lim, [1.0])
    assert sol.ok and sol.optimizer[0] == pytest.approx(1.0)


# ---------------------------------------------------------------- detection


def make_err(e, de, h0=0.0, h1=0.0):
    return ErrorState(np.array(e), (np.array(de),), (np.array([h0] * len(e)), np.array([h1] * len(e))))


def test_no_trigger_inside_bounds():
    model = scalar_model(lambda x: np.zeros(1), 1.0)
    bounds = EventBounds([1.0], ([0.5],), [0.4])
    assert detect_event(make_err([0.0], [0.0]), model, bounds, [1.0]) is None


def test_event1_at_threshold():
    model = scalar_model(lambda x: np.zeros(1), 1.0)
    bounds = EventBounds([1.0], ([0.5],), [0.4])
    assert detect_event(make_err([1.0], [0.0]), model, bounds, [1.0]) == (Trigger.EVENT1, 0)
    assert detect_event(make_err([0.99], [0.0]), model, bounds, [1.0]) is None


def test_event_priority_and_kinds():
    model = scalar_model(lambda x: np.zeros(1), 1.5)
    bounds = EventBounds([1.0], ([0.5],), [0.4])
    assert detect_event(make_err([0.0], [0.6]), model, bounds, [1.5]) == (Trigger.EVENT2, 1)
    assert detect_event(make_err([0.0], [0.0]), model, bounds, [1.0]) == (Trigger.EVENT3, 0)
    assert detect_event(make_err([1.2], [0.6]), model, bounds, [1.0])[0] is Trigger.EVENT1


def test_noise_uses_worst_endpoint():
    model = scalar_model(lambda x: np.zeros(1), 1.0)
    bounds = EventBounds([1.0], ([0.5],), [0.4])
    assert detect_event(make_err([0.95], [0.0], h0=0.06), model, bounds, [1.0]) == (Trigger.EVENT1, 0)


def test_theta_tightens_threshold():
    model = scalar_model(lambda x: np.zeros(1), 1.0)
    bounds = EventBounds([1.0], ([0.5],), [0.4])
    assert detect_event(make_err([0.8], [0.0]), model, bounds, [1.0], theta=0.8) == (Trigger.EVENT1, 0)


# ---------------------------------------------------------------- synchronization


def test_first_sync_with_zero_error_copies_state():
    model = scalar_model(lambda x: np.zeros(1), 2.0)
    meas = Measurement(0.0, np.array([2.0]), (np.array([0.0]),))
    synced = synchronize(model, meas, np.zeros(1))
    np.testing.assert_array_equal(synced.correction, [0.0])
    np.testing.assert_array_equal(synced.state, [2.0])
    assert synced.n_updates == 1


def test_acc_h2_accumulates_edot():
    p = AccParams()
    model = make_model(p, 0.0, 0.4)
    meas = Measurement(0.0, np.array([18.0, 50.0]), (np.zeros(2), np.zeros(2)))
    edot = 0.0 - (0.4 + p.v_p - 18.0)
    synced = acc_synchronize(p, model, meas, np.zeros(1))
    assert synced.correction[1] == pytest.approx(0.4 + edot)


def test_acc_perfect_agreement_keeps_h():
    p = AccParams()
    model = make_model(p)
    v = 18.0
    vdot = -float(np.polyval([p.g2, p.g1, p.g0], v)) / p.M  # model v' with u = 0
    meas = Measurement(0.0, np.array([v, 50.0]), (np.array([vdot, p.v_p - v]), np.array([0.0, -vdot])))
    synced = acc_synchronize(p, model, meas, np.zeros(1))
    np.testing.assert_allclose(synced.correction, [0.0, 0.0], atol=1e-15)


# ---------------------------------------------------------------- the loop


def test_perfect_model_single_event():
    sc = ToyScenario(ToyParams(target=2.0), scale=0.0)
    log = run_event_loop(sc, seed=0)
    assert log.qp_count == 1 and log.events[0].trigger is Trigger.INITIAL
    assert log.column("b").min() >= 0


@pytest.fixture(scope="module")
def acc_log():
    return run_event_loop(AccScenario(), seed=3)


def test_event_times_increase(acc_log):
    times = [ev.t_k for ev in acc_log.events]
    assert times[0] == 0.0 and all(b > a for a, b in zip(times, times[1:]))


def test_error_zero_at_every_event(acc_log):
    for ev in acc_log.events:
        assert acc_log.rows[ev.sample]["e2"] == 0.0


def test_trigger_soundness(acc_log):
    p = AccScenario().params
    rows = acc_log.rows
    ev_at = {ev.sample: ev for ev in acc_log.events}
    derivs = {k: max(abs(np.diff(acc_log.column(k)))) for k in ("e2", "e2dot", "e2ddot", "v_bar", "z_bar")}
    anchor = None
    for k, r in enumerate(rows):
        if k in ev_at:
            anchor = ev_at[k].anchor
            continue
        nxt = k + 1 in ev_at
        if nxt:
            continue  # the sample that trips the threshold may overshoot by one period
        assert abs(r["e2"]) <= p.w2 + derivs["e2"]
        assert abs(r["e2dot"]) <= p.nu21 + derivs["e2dot"]
        assert abs(r["e2ddot"]) <= p.nu22 + derivs["e2ddot"]
        assert abs(r["v_bar"] - anchor[0]) <= p.s1 + derivs["v_bar"]
        assert abs(r["z_bar"] - anchor[1]) <= p.s2 + derivs["z_bar"]


def test_control_held_between_events(acc_log):
    ev_at = {ev.sample for ev in acc_log.events}
    u = acc_log.column("u")
    for k in range(1, len(u)):
        if k not in ev_at:
            assert u[k] == u[k - 1]


def test_determinism():
    a = run_event_loop(ToyScenario(), seed=4)
    b = run_event_loop(ToyScenario(), seed=4)
    assert a.rows == b.rows


def test_halt_on_infeasible():
    sc = ToyScenario(ToyParams(u_max=0.01, a_low=-0.2, a_high=-0.2))
    with pytest.raises(QpInfeasibleError) as info:
        run_event_loop(sc, seed=0)
    assert info.value.log.halted == "infeasible"
    assert info.value.log.rows[-1]["qp_status"] == "infeasible"


def test_clamp_policy_continues():
    sc = ToyScenario(ToyParams(u_max=0.01, a_low=-0.2, a_high=-0.2))
    log = run_event_loop(sc, seed=0, config=LoopConfig(infeasible_policy="clamp"))
    assert log.infeasible_count >= 1
    assert len(log.rows) == sc.sensor.n_samples(sc.horizon)
    bad = [ev for ev in log.events if not ev.qp_status == "optimal"]
    assert all(ev.control[0] == 0.01 for ev in bad)


def test_generic_rd1_builder_matches_hand_split():
    model = scalar_model(lambda x: np.zeros(1), 1.0)
    model.correction = np.array([0.05])
    bounds = EventBounds([0.2], ([0.1],), [0.2])
    generic = limit_values_rd1(rd1_identity(model), model.state, bounds, 1.0)
    hand = ToyScenario().limit_values(model, 1.0)
    for name in ("b_f_min", "b_e_min", "b_alpha_min"):
        assert getattr(generic, name) == pytest.approx(getattr(hand, name), abs=1e-12)
    np.testing.assert_allclose(generic.b_g_lim, hand.b_g_lim)
