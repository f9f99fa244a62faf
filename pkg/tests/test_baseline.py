import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longctl.baseline import (
    AdasDriver,
    BaselineParams,
    baseline_action,
    compute_ttc,
    cruise_accel,
    run_baseline_scenario,
    ttc_array,
)
from longctl.dynamics import EnvState, Normal, Platoon, ScenarioConfig, Uniform, VehicleState, sample_scenario
from longctl.errors import DomainError
from longctl.evaluation import edge_case_config

P = BaselineParams()
NO_KF = BaselineParams(use_kalman=False)


def front_view(gap, v_m, v_f):
    return EnvState(gap, math.inf, v_f, v_m, v_m, 0.0, 0.0, 0.0)


class TestTtc:
    def test_boundary_example(self):
        assert compute_ttc(28.0, 25.0, 5.0) == 1.4

    def test_opening(self):
        assert compute_ttc(10.0, 5.0, 5.0) == math.inf
        assert compute_ttc(10.0, 5.0, 6.0) == math.inf

    def test_substitution(self):
        assert compute_ttc(14.0, 20.0, 10.0) == pytest.approx(1.4)

    def test_non_positive_gap(self):
        with pytest.raises(DomainError):
            compute_ttc(0.0, 10.0, 0.0)

    def test_vectorised_agrees(self):
        rng = np.random.default_rng(0)
        g, vr, vf = rng.uniform(0.1, 50, 200), rng.uniform(0, 30, 200), rng.uniform(0, 30, 200)
        assert np.array_equal(ttc_array(g, vr, vf), [compute_ttc(*t) for t in zip(g, vr, vf)])
        assert ttc_array(-1.0, 10.0, 0.0) == 0.0


class TestAction:
    def test_light_brakes_below_threshold(self):
        assert baseline_action(front_view(13.9, 20.0, 10.0), P) == -7.5

    def test_tie_cruises(self):
        assert baseline_action(front_view(14.0, 20.0, 10.0), P, v_set=20.0) == 0.0

    def test_heavy_clamped(self):
        assert baseline_action(front_view(10.0, 20.0, 10.0), P, vclass="heavy") == -4.0

    def test_cruise_law(self):
        assert cruise_accel(18.0, 20.0, P) == pytest.approx(1.0)
        assert cruise_accel(19.5, 20.0, P) == pytest.approx(0.25)
        assert cruise_accel(25.0, 20.0, P) == pytest.approx(-1.0)

    @settings(max_examples=200, deadline=None)
    @given(gap=st.floats(0.01, 100.0), v_m=st.floats(0.0, 40.0), v_f=st.floats(0.0, 40.0), v_set=st.floats(0.0, 40.0))
    def test_no_positive_accel_under_threshold(self, gap, v_m, v_f, v_set):
        a = baseline_action(front_view(gap, v_m, v_f), P, v_set=v_set)
        if compute_ttc(gap, v_m, v_f) < P.ttc_threshold:
            assert a < 0


def stopped_obstacle(gap0, v=10.0):
    """A light vehicle cruising at ``v`` toward a stopped one ``gap0`` metres ahead."""
    return Platoon([VehicleState(100.0, 0.0, vid=0), VehicleState(100.0 - 4.0 - gap0, v, vid=1)], (1,))


def onset(gap0, steps=40):
    drv = AdasDriver(1, NO_KF, v_set=10.0)
    p = stopped_obstacle(gap0)
    for k in range(steps):
        a = drv.command(p, k)
        if a < 0:
            return k
        me = p.vehicles[1]
        p = Platoon([p.vehicles[0], VehicleState(me.x + me.v * p.dt, me.v, vid=1)], (1,), k + 1)
    return None


class TestDriver:
    def test_threshold_sharpness(self):
        # gap shrinks 0.5 m per step; at step 4 it equals 14 m exactly (TTC 1.4 s, no trigger)
        assert onset(16.0) == 5
        assert onset(16.0 - 1e-9) == 4

    def test_latch_persists(self):
        drv = AdasDriver(1, NO_KF, v_set=10.0)
        drv.command(stopped_obstacle(5.0), 0)
        assert drv.latched and drv.trigger_step == 0
        # even with the obstacle gone far ahead the vehicle keeps braking
        far = Platoon([VehicleState(1e4, 50.0, vid=0), VehicleState(0.0, 5.0, vid=1)], (1,))
        assert drv.command(far, 1) == -7.5

    def test_front_vehicle_cruises(self):
        drv = AdasDriver(0, NO_KF, v_set=20.0)
        assert drv.command(Platoon([VehicleState(0.0, 19.0, vid=0)], (0,)), 0) == pytest.approx(0.5)


def scenario(case):
    return sample_scenario(edge_case_config(case), 0)


class TestScenarios:
    def test_scenario_3_truck_collides(self):
        log, report = run_baseline_scenario(scenario(3))
        assert report.occurred
        order = [int(v) for v in log.rows[-1]["order"].split("-")]
        assert (order[report.pair[0]], order[report.pair[1]]) == (1, 2)

    def test_scenario_4_sedan_safe(self):
        _, report = run_baseline_scenario(scenario(4))
        assert not report.occurred

    def test_lead_never_brakes(self):
        cfg = ScenarioConfig(lead_brake_time=Uniform(lo=1e3, hi=1e3), episode_max_steps=400,
                             jitter_accel=Normal(mean=0.0, std=0.0))
        log, report = run_baseline_scenario(sample_scenario(cfg, 0))
        assert not report.occurred
        assert np.allclose(log.column("v1"), 20.0)

    def test_deterministic(self):
        a, _ = run_baseline_scenario(scenario(1))
        b, _ = run_baseline_scenario(scenario(1))
        assert a.rows == b.rows

    def test_params_validated(self):
        with pytest.raises(ValueError):
            BaselineParams(ttc_threshold=0.0)
        with pytest.raises(ValueError):
            BaselineParams(aeb_decel=1.0)

