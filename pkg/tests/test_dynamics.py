import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longctl.dynamics import (
    CLASS_SPECS,
    GAP_SENTINEL,
    CutInConfig,
    Normal,
    Platoon,
    ScenarioConfig,
    Uniform,
    VehicleClass,
    VehicleSpec,
    VehicleState,
    compute_gaps,
    detect_collision,
    insert_cut_in,
    observe,
    sample_scenario,
    step_platoon,
    step_vehicle,
)
from longctl.errors import ConfigError, DomainError


def light(x, v=20.0, vid=0):
    return VehicleState.of_class("light", x, v, vid)


def quiet_config(**kw):
    """Deterministic three-vehicle scenario: no jitter, no position noise."""
    base = dict(
        vehicles=[
            VehicleSpec(role="lead", x=Normal(mean=36.0)),
            VehicleSpec(role="rl", x=Normal(mean=18.0)),
            VehicleSpec(role="follower", x=Normal(mean=0.0)),
        ],
        jitter_accel=Normal(mean=0.0, std=0.0),
        lead_brake_decel=Normal(mean=-7.5),
        lead_brake_time=Uniform(lo=1.0, hi=1.0),
        follower_mode="cruise",
    )
    base.update(kw)
    return ScenarioConfig(**base)


class TestStepVehicle:
    def test_constant_velocity(self):
        s = step_vehicle(light(0.0, 10.0), 0.0, 0.05)
        assert s.x == pytest.approx(0.5, abs=1e-12)
        assert s.v == 10.0

    def test_hard_brake_substitution(self):
        s = step_vehicle(light(0.0, 1.0), -7.5, 0.05)
        assert s.v == pytest.approx(0.625, abs=1e-12)
        assert s.x == pytest.approx(0.040625, abs=1e-12)

    def test_stop_within_step(self):
        s = step_vehicle(light(0.0, 0.1), -7.5, 0.05)
        t_s = 0.1 / 7.5
        assert s.v == 0.0
        assert s.x == pytest.approx(0.1 * t_s - 0.5 * 7.5 * t_s**2, abs=1e-15)

    def test_clamps_to_class_limits(self):
        heavy = VehicleState.of_class("heavy", 0.0, 20.0)
        assert step_vehicle(heavy, -20.0).a == -4.0
        assert step_vehicle(light(0.0), 50.0).a == 3.0

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(DomainError):
            step_vehicle(light(0.0), bad)

    def test_bad_dt_rejected(self):
        with pytest.raises(DomainError):
            step_vehicle(light(0.0), 0.0, 0.0)

    def test_state_invariants(self):
        with pytest.raises(DomainError):
            VehicleState(0.0, -1.0)
        with pytest.raises(DomainError):
            VehicleState(0.0, 1.0, length=0.0)
        with pytest.raises(DomainError):
            VehicleState(0.0, 1.0, max_decel=1.0)

    @settings(max_examples=300, deadline=None)
    @given(
        v=st.floats(0.0, 40.0),
        cmds=st.lists(st.floats(-20.0, 20.0), min_size=1, max_size=60),
        vclass=st.sampled_from(["light", "heavy"]),
    )
    def test_velocity_never_negative_and_accel_clamped(self, v, cmds, vclass):
        s = VehicleState.of_class(vclass, 0.0, v)
        for c in cmds:
            x_before = s.x
            s = step_vehicle(s, c)
            assert s.v >= 0.0
            assert s.max_decel <= s.a <= s.accel_cap
            assert s.x >= x_before  # no reversing


class TestGapsAndCollision:
    def test_bumper_gap(self):
        p = Platoon([light(36.0), light(18.0), light(0.0)])
        assert compute_gaps(p, 1) == (14.0, 14.0)

    def test_identical_positions_negative(self):
        p = Platoon([light(10.0), light(10.0), light(0.0)])
        assert compute_gaps(p, 1)[0] < 0

    def test_trailing_ego_sentinel(self):
        p = Platoon([light(20.0), light(0.0)], rl_indices=(1,))
        assert compute_gaps(p, 1)[1] == GAP_SENTINEL

    def test_no_collision(self):
        assert not detect_collision(Platoon([light(36.0), light(18.0), light(0.0)]), 2.0).occurred

    def test_front_pair_flagged(self):
        r = detect_collision(Platoon([light(23.9), light(18.0), light(0.0)]), 2.0)
        assert r.occurred and r.pair == (0, 1)
        assert r.gap_at_event == pytest.approx(1.9)

    def test_scan_order(self):
        r = detect_collision(Platoon([light(25.0), light(18.0), light(12.01)]), 2.0)
        assert r.occurred and r.pair == (1, 2)

    def test_negative_threshold(self):
        with pytest.raises(DomainError):
            detect_collision(Platoon([light(1.0)]), -1.0)


class TestScenario:
    def test_seed_determinism(self):
        cfg = ScenarioConfig()
        a, b = sample_scenario(cfg, 7), sample_scenario(cfg, 7)
        assert [v.x for v in a.platoon.vehicles] == [v.x for v in b.platoon.vehicles]
        assert np.array_equal(a.jitter, b.jitter)
        assert a.drivers == b.drivers

    def test_default_ordering(self):
        for seed in range(200):
            xs = [v.x for v in sample_scenario(ScenarioConfig(), seed).platoon.vehicles]
            assert xs[0] > xs[1] > xs[2]

    def test_zero_std_exact_means(self):
        inst = sample_scenario(quiet_config(), 0)
        assert [v.x for v in inst.platoon.vehicles] == [36.0, 18.0, 0.0]
        assert inst.drivers[0].brake_decel == -7.5
        assert inst.drivers[0].brake_step == 20

    def test_unorderable_config(self):
        cfg = quiet_config(vehicles=[
            VehicleSpec(role="lead", x=Normal(mean=0.0)),
            VehicleSpec(role="rl", x=Normal(mean=0.0)),
        ])
        with pytest.raises(ConfigError):
            sample_scenario(cfg, 0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            Uniform(lo=2.0, hi=1.0)
        with pytest.raises(ValueError):
            Normal(mean=0.0, std=-1.0)
        with pytest.raises(ValueError):
            ScenarioConfig(episode_max_steps=0)
        with pytest.raises(ValueError):
            ScenarioConfig(unknown=1)
        with pytest.raises(ValueError):
            quiet_config(cutin=CutInConfig(trigger_step=5000, insert_role="leading"))


class TestStepPlatoon:
    def test_coasting(self):
        inst = sample_scenario(quiet_config(), 0)
        p, events = step_platoon(inst.platoon, [0.0], inst)
        assert [v.x for v in p.vehicles] == pytest.approx([37.0, 19.0, 1.0])
        assert events == [] and p.time_step == 1

    def test_lead_brake_event(self):
        inst = sample_scenario(quiet_config(), 0)
        p = inst.platoon
        kinds = []
        for _ in range(25):
            p, ev = step_platoon(p, [0.0], inst)
            kinds += [(e.kind, e.step) for e in ev]
        assert ("brake", 20) in kinds
        assert p.vehicles[0].a == -7.5
        assert p.vehicles[0].v == pytest.approx(20.0 - 5 * 7.5 * 0.05)

    def test_wrong_command_count(self):
        inst = sample_scenario(quiet_config(), 0)
        with pytest.raises(DomainError):
            step_platoon(inst.platoon, [0.0, 0.0], inst)

    @pytest.mark.parametrize("role,ego_after", [("leading", 2), ("following", 1)])
    def test_cut_in_insertion(self, role, ego_after):
        cfg = quiet_config(cutin=CutInConfig(trigger_step=3, insert_role=role, vclass="heavy"))
        inst = sample_scenario(cfg, 0)
        p = inst.platoon
        for _ in range(2):
            p, _ = step_platoon(p, [0.0], inst)
        before = list(p.vehicles)
        p, events = step_platoon(p, [0.0], inst)
        assert any(e.kind == "cut_in" and e.step == 3 for e in events)
        assert len(p.vehicles) == 4 and p.ego == ego_after
        new = p.vehicles[ego_after - 1] if role == "leading" else p.vehicles[ego_after + 1]
        assert new.vclass == VehicleClass.HEAVY and new.length == CLASS_SPECS[VehicleClass.HEAVY][0]
        front, rear = (p.vehicles[0], p.vehicles[2]) if role == "leading" else (p.vehicles[1], p.vehicles[3])
        assert new.x == pytest.approx(0.5 * (front.x + rear.x))
        assert new.v == pytest.approx(0.5 * (front.v + rear.v))
        # the other vehicles moved exactly as they would have without the cut-in
        assert [v.x for v in p.vehicles if v.vid != new.vid] == pytest.approx([v.x + 1.0 for v in before])

    def test_insert_requires_neighbour(self):
        from longctl.dynamics import CutInSpawn

        p = Platoon([light(10.0, vid=0), light(0.0, vid=1)], rl_indices=(0,))
        with pytest.raises(DomainError):
            insert_cut_in(p, CutInSpawn(1, "leading", VehicleClass.LIGHT, 2))

    def test_determinism_and_energy(self):
        inst = sample_scenario(quiet_config(lead_brake_time=Uniform(lo=100.0, hi=100.0)), 0)

        def roll():
            p = inst.platoon
            for _ in range(40):
                p, _ = step_platoon(p, [0.0], inst)
            return p

        a, b = roll(), roll()
        assert [v.x for v in a.vehicles] == [v.x for v in b.vehicles]
        assert all(v.v == 20.0 for v in a.vehicles)

    def test_ordering_preserved_without_collision(self):
        inst = sample_scenario(ScenarioConfig(follower_mode="cruise"), 3)
        p = inst.platoon
        for _ in range(30):
            p, ev = step_platoon(p, [0.0], inst)
            assert all(g > 0 for g in p.gaps())
            assert [v.vid for v in p.vehicles] == [0, 1, 2]


class TestObserve:
    def test_ground_truth(self):
        p = Platoon([light(36.0, 21.0), light(18.0, 20.0), light(0.0, 19.0)])
        s = observe(p)
        assert s.as_array().tolist() == [14.0, 14.0, 21.0, 20.0, 19.0, 0.0, 0.0, 0.0]

    def test_trailing_ego(self):
        p = Platoon([light(20.0), light(0.0)], rl_indices=(1,))
        assert observe(p).d_mr == GAP_SENTINEL
