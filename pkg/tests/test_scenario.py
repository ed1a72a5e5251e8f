import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from vrbsim.constraints import rigidity_check
from vrbsim.errors import ParseError, ScenarioError, ValidationError
from vrbsim.scenario import (
    apply_override,
    bundled_names,
    dump_scenario,
    load_scenario,
    parse_scenario,
    read_scenario_text,
    scenario_to_dict,
)

SQ2 = 4 * np.sqrt(2)

TRIANGLE = """
name: tri
agents:
  - {mass: 1, position: [1, 6, 3]}
  - {mass: 1, position: [8, 3, 3]}
  - {mass: 1, position: [7, 6, 3]}
constraints:
  pairs: [[1, 2], [1, 3], [2, 3]]
  phases:
    - {start: 0, distances: [4, 4, 4]}
"""


def raw(text=TRIANGLE):
    return yaml.safe_load(text)


def parse_dict(d):
    return parse_scenario(yaml.safe_dump(d))


def same_scenario(a, b):
    return scenario_to_dict(a) == scenario_to_dict(b)


class TestBundled:
    def test_names(self):
        names = bundled_names()
        for expected in ("triangle_establish", "table2_mission", "table3_mission", "cube_establish", "cube_waypoint",
                         "two_agent_line", "four_agent_square", "five_agent_pyramid", "six_agent_hexagon"):
            assert expected in names

    @pytest.mark.parametrize("name", bundled_names())
    def test_every_bundled_scenario_checks(self, name):
        sc = load_scenario(name)
        assert rigidity_check(sc.constraint_set(), sc.particle_system()).passes

    def test_table1_encoding(self):
        # values from the formation establishment input table
        sc = load_scenario("triangle_establish")
        assert sc.n_agents == 3 and np.all(sc.masses == 1.0)
        np.testing.assert_array_equal(sc.positions, [[1, 6, 3], [8, 3, 3], [7, 6, 3]])
        assert not np.any(sc.velocities)
        cs = sc.constraint_set()
        np.testing.assert_array_equal(cs.desired(0.0), [4, 4, 4])
        np.testing.assert_array_equal(cs.desired(6.0), [4, 8, 4])
        np.testing.assert_array_equal(cs.desired(13.0), [4, 4, 4])
        np.testing.assert_allclose(sc.establish_forces(), [[0.1, 0.1, 9.81]] * 3)

    def test_table2_waypoint(self):
        sc = load_scenario("table2_mission")
        wp = sc.waypoints[-1]
        np.testing.assert_array_equal(wp.position, [15, 15, 15])
        np.testing.assert_array_equal(wp.attitude_deg, [0, 0, -90])
        assert not np.any(wp.velocity) and not np.any(wp.rates_deg)

    def test_table3_waypoints(self):
        sc = load_scenario("table3_mission")
        table = [
            ([17.5, 7.5, 20], [0, 0, 0], 0),
            ([35, 7.5, 20], [2, 0, 0], 0),
            ([45, 20, 20], [0, 2, 0], 0),
            ([45, 50, 20], [0, 0, 0], 0),
            ([45, 50, 20], [0, 0, 0], 90),
            ([45, 90, 20], [0, 0, 0], 90),
        ]
        for wp, (pos, vel, yaw) in zip(sc.waypoints[1:], table):
            np.testing.assert_array_equal(wp.position, pos)
            np.testing.assert_array_equal(wp.velocity, vel)
            assert wp.attitude_deg[2] == yaw

    def test_cube_encoding(self):
        sc = load_scenario("cube_establish")
        d = dict(zip(map(tuple, sc.pairs + 1), sc.constraint_set().desired(0.0)))
        assert len(d) == 18
        table = {
            (1, 2): 4, (1, 4): 4, (1, 5): 4, (1, 6): SQ2,
            (2, 3): 4, (2, 4): SQ2, (2, 6): 4, (2, 7): SQ2,
            (3, 4): 4, (3, 7): 4, (3, 8): SQ2,
            (4, 5): 4, (4, 8): SQ2,
            (5, 6): 4, (5, 8): 4,
            (6, 7): 4, (6, 8): SQ2,
            (7, 8): 4,
        }
        for pair, value in table.items():
            assert d[pair] == pytest.approx(value, abs=1e-12)
        np.testing.assert_array_equal(sc.positions[6], [7, 8, 4])

    def test_cube_waypoint(self):
        np.testing.assert_array_equal(load_scenario("cube_waypoint").waypoints[-1].position, [10, 4.25, 4.5])

    def test_unknown_name(self):
        with pytest.raises(ScenarioError):
            read_scenario_text("no_such_scenario")


class TestValidation:
    def test_duplicate_pair_named(self):
        d = raw()
        d["constraints"]["pairs"] = [[1, 2], [1, 3], [2, 1]]
        with pytest.raises(ValidationError, match=r"duplicate constraint pair \(1, 2\)"):
            parse_dict(d)

    def test_unknown_field_path(self):
        d = raw()
        d["constraints"]["gain"] = {}
        with pytest.raises(ValidationError) as info:
            parse_dict(d)
        assert info.value.path == "constraints.gain"

    def test_malformed_yaml(self):
        with pytest.raises(ParseError):
            parse_scenario("agents: [unclosed")

    def test_index_out_of_range(self):
        d = raw()
        d["constraints"]["pairs"][0] = [1, 4]
        with pytest.raises(ValidationError, match="outside"):
            parse_dict(d)

    def test_first_phase_must_start_at_zero(self):
        d = raw()
        d["constraints"]["phases"][0]["start"] = 1.0
        with pytest.raises(ValidationError):
            parse_dict(d)

    def test_wrong_distance_count(self):
        d = raw()
        d["constraints"]["phases"][0]["distances"] = [4, 4]
        with pytest.raises(ValidationError):
            parse_dict(d)

    def test_not_rigid(self):
        d = raw()
        d["constraints"]["pairs"] = [[1, 2], [1, 3]]
        d["constraints"]["phases"][0]["distances"] = [4, 4]
        with pytest.raises(ValidationError, match="rigidity"):
            parse_dict(d)
        d["constraints"]["partial"] = True
        assert parse_dict(d).partial

    def test_coincident_start(self):
        d = raw()
        d["agents"][1]["position"] = [1, 6, 3]
        with pytest.raises(ValidationError):
            parse_dict(d)

    def test_frame_agent_in_pair(self):
        d = raw()
        d["frame"] = {"x_axis_agent": 1, "y_axis_pair": [1, 2]}
        with pytest.raises(ValidationError):
            parse_dict(d)

    def test_bad_control_mode(self):
        d = raw()
        d["control"] = {"mode": "telepathy"}
        with pytest.raises(ValidationError, match="control.mode"):
            parse_dict(d)


class TestRoundTrip:
    @pytest.mark.parametrize("name", bundled_names())
    def test_dump_is_idempotent(self, name):
        once = load_scenario(name)
        text = dump_scenario(once)
        twice = parse_scenario(text)
        assert same_scenario(once, twice)
        assert dump_scenario(twice) == text

    @settings(max_examples=30, deadline=None)
    @given(
        st.floats(0.001, 0.05),
        st.floats(0.5, 60),
        st.floats(0.5, 3.0),
        st.floats(0.1, 3.0),
    )
    def test_round_trip_random_settings(self, dt, t_end, alpha, beta):
        d = raw()
        d["sim"] = {"dt": dt, "t_end": t_end}
        d["constraints"]["gains"] = {"alpha": alpha, "beta": beta}
        sc = parse_dict(d)
        assert same_scenario(sc, parse_scenario(dump_scenario(sc)))


class TestOverrides:
    def test_scalar_and_list(self):
        d = raw()
        apply_override(d, "sim.dt=0.005")
        apply_override(d, "agents.0.position=[0, 0, 1]")
        assert d["sim"]["dt"] == 0.005 and d["agents"][0]["position"] == [0, 0, 1]

    def test_bad_list_index(self):
        with pytest.raises(ValidationError):
            apply_override(raw(), "agents.7.mass=2")

    def test_missing_equals(self):
        with pytest.raises(ValidationError):
            apply_override(raw(), "sim.dt")

    def test_load_with_overrides(self):
        sc = load_scenario("triangle_establish", ["sim.t_end=3", "constraints.gains.alpha=2.0"])
        assert sc.sim.t_end == 3.0 and sc.gains.alpha == 2.0
