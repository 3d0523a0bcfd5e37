"""Environment contracts: dynamics, resets, enumeration, config loading."""

import numpy as np
import pytest

from madnav import envs
from madnav.envs import (DOWN, LEFT, RIGHT, UP, Env, EnvSpec, cell_of,
                         enumerate_states, env_spec_from_dict, free_cells,
                         grid_state, keydoor_layout, load_env_spec,
                         num_actions, spec_to_dict, state_key, transition)
from madnav.errors import ConfigError, UnsupportedEnvError


def test_num_actions_and_state_dim():
    grid = EnvSpec(env_id="open_grid", width=5, height=5)
    key = EnvSpec(env_id="keydoor_grid", width=5, height=5)
    hill = EnvSpec(env_id="mountain_hill")
    assert num_actions(grid) == 4
    assert num_actions(key) == 4
    assert num_actions(hill) == 3
    assert envs.state_dim(grid) == 2
    assert envs.state_dim(key) == 3
    assert envs.state_dim(hill) == 2


def test_reset_open_grid_in_domain():
    spec = EnvSpec(env_id="open_grid", width=5, height=5)
    env = Env(spec)
    s = env.reset(seed=123)
    x, y = cell_of(spec, s)
    assert 0 <= x < 5 and 0 <= y < 5


def test_reset_keydoor_starts_without_key():
    spec = EnvSpec(env_id="keydoor_grid", width=6, height=6)
    s = Env(spec).reset(seed=0)
    assert s[2] == 0.0
    assert cell_of(spec, s) == keydoor_layout(spec)[0]


def test_reset_hill_start_range():
    spec = EnvSpec(env_id="mountain_hill")
    for seed in range(5):
        s = Env(spec).reset(seed=seed)
        assert -0.6 <= s[0] <= -0.4
        assert s[1] == 0.0


def test_step_moves_one_cell():
    spec = EnvSpec(env_id="open_grid", width=6, height=6)
    s = grid_state(spec, 2, 2)
    assert cell_of(spec, transition(spec, s, RIGHT)) == (3, 2)
    assert cell_of(spec, transition(spec, s, LEFT)) == (1, 2)
    assert cell_of(spec, transition(spec, s, UP)) == (2, 3)
    assert cell_of(spec, transition(spec, s, DOWN)) == (2, 1)


def test_step_blocked_by_wall_stays_in_place():
    spec = EnvSpec(env_id="walls_grid", width=6, height=6, walls=frozenset({(3, 2)}))
    s = grid_state(spec, 2, 2)
    s2 = transition(spec, s, RIGHT)
    assert cell_of(spec, s2) == (2, 2)
    # blocked moves are idempotent
    assert np.array_equal(s2, transition(spec, s2, RIGHT))


def test_step_blocked_by_bounds():
    spec = EnvSpec(env_id="open_grid", width=4, height=4)
    s = grid_state(spec, 0, 0)
    assert cell_of(spec, transition(spec, s, LEFT)) == (0, 0)
    assert cell_of(spec, transition(spec, s, DOWN)) == (0, 0)


def test_keydoor_pickup_and_door_rules():
    spec = EnvSpec(env_id="keydoor_grid", width=6, height=6)
    start, key, door, walls = keydoor_layout(spec)
    # entering the key cell raises the flag
    below_key = grid_state(spec, key[0], key[1] - 1, has_key=0)
    got = transition(spec, below_key, UP)
    assert cell_of(spec, got) == key and got[2] == 1.0
    # the door cell is impassable without the key
    left_of_door = grid_state(spec, door[0] - 1, door[1], has_key=0)
    stay = transition(spec, left_of_door, RIGHT)
    assert cell_of(spec, stay) == (door[0] - 1, door[1])
    # and passable with it
    with_key = grid_state(spec, door[0] - 1, door[1], has_key=1)
    through = transition(spec, with_key, RIGHT)
    assert cell_of(spec, through) == door and through[2] == 1.0


def test_keydoor_key_never_dropped():
    spec = EnvSpec(env_id="keydoor_grid", width=5, height=5)
    rng = np.random.default_rng(3)
    env = Env(spec)
    s = env.reset(rng)
    had = False
    for _ in range(300):
        s, _, _ = env.step(int(rng.integers(4)))
        if s[2] == 1.0:
            had = True
        assert not (had and s[2] == 0.0)


def test_hill_step_matches_stated_update():
    spec = EnvSpec(env_id="mountain_hill")
    s = np.array([-0.5, 0.0])
    out = transition(spec, s, 2)
    vel = 0.001 - 0.0025 * np.cos(3 * -0.5)
    assert out[1] == pytest.approx(vel)
    assert out[0] == pytest.approx(-0.5 + vel)
    # clipping at the left edge zeroes velocity
    edge = np.array([-1.2, -0.05])
    out = transition(spec, edge, 0)
    assert out[0] == -1.2 and out[1] == 0.0


def test_hill_terminates_past_crest():
    spec = EnvSpec(env_id="mountain_hill")
    assert envs.is_terminal(spec, np.array([0.5, 0.01]))
    assert not envs.is_terminal(spec, np.array([0.49, 0.01]))


def test_episode_reward_and_budget():
    spec = EnvSpec(env_id="open_grid", width=4, height=4, max_episode_steps=3)
    env = Env(spec, goal=grid_state(spec, 3, 3))
    env.reset(seed=1)
    env.state = grid_state(spec, 0, 0)
    total, done = 0.0, False
    steps = 0
    while not done:
        _, r, done = env.step(DOWN)  # never reaches the goal
        total += r
        steps += 1
    assert steps == 3 and total == -3.0


def test_goal_reaching_sets_done():
    spec = EnvSpec(env_id="open_grid", width=4, height=4)
    env = Env(spec, goal=grid_state(spec, 1, 0))
    env.reset(seed=1)
    env.state = grid_state(spec, 0, 0)
    s, r, done = env.step(RIGHT)
    assert done and r == -1.0 and env.at_goal(s)


def test_trajectory_determinism_bitwise():
    spec = EnvSpec(env_id="mountain_hill")
    outs = []
    for _ in range(2):
        env = Env(spec)
        s = env.reset(seed=77)
        states = [s]
        for a in [2, 2, 0, 1, 2, 0, 0, 1]:
            s, _, _ = env.step(a)
            states.append(s)
        outs.append(np.array(states))
    assert np.array_equal(outs[0], outs[1])


def test_enumerate_counts():
    assert len(enumerate_states(EnvSpec(env_id="open_grid", width=5, height=5))) == 25
    walls = frozenset({(0, 1), (1, 1), (2, 2), (3, 3), (4, 0)})
    spec = EnvSpec(env_id="walls_grid", width=5, height=5, walls=walls)
    assert len(enumerate_states(spec)) == 20


def test_enumerate_keydoor_reachable_only():
    # independent reachability count from networkx over the product graph
    import networkx as nx

    spec = EnvSpec(env_id="keydoor_grid", width=4, height=4)
    start = grid_state(spec, *keydoor_layout(spec)[0], has_key=0)
    graph = nx.DiGraph()
    frontier = [state_key(spec, start)]
    seen = {frontier[0]: start}
    while frontier:
        nxt = []
        for k in frontier:
            s = seen[k]
            for a in range(4):
                t = transition(spec, s, a)
                kt = state_key(spec, t)
                graph.add_edge(k, kt)
                if kt not in seen:
                    seen[kt] = t
                    nxt.append(kt)
        frontier = nxt
    reach = nx.descendants(graph, state_key(spec, start)) | {state_key(spec, start)}
    listed = enumerate_states(spec)
    assert len(listed) == len(reach)
    assert {state_key(spec, s) for s in listed} == reach
    assert len(listed) <= 2 * 16


def test_enumerate_closed_under_step(grid5):
    listed = enumerate_states(grid5)
    keys = {state_key(grid5, s) for s in listed}
    for s in listed:
        for a in range(4):
            assert state_key(grid5, transition(grid5, s, a)) in keys


def test_enumerate_rejects_continuous():
    with pytest.raises(UnsupportedEnvError):
        enumerate_states(EnvSpec(env_id="mountain_hill"))
    with pytest.raises(UnsupportedEnvError):
        state_key(EnvSpec(env_id="mountain_hill"), np.array([0.0, 0.0]))


def test_spec_validation_errors():
    with pytest.raises(ConfigError):
        EnvSpec(env_id="no_such_env", width=5, height=5)
    with pytest.raises(ConfigError):
        EnvSpec(env_id="open_grid", width=1, height=5)
    # walls covering every cell leave nowhere to start
    walls = frozenset((x, y) for x in range(2) for y in range(2))
    with pytest.raises(ConfigError):
        EnvSpec(env_id="walls_grid", width=2, height=2, walls=walls)
    with pytest.raises(ConfigError):
        EnvSpec(env_id="walls_grid", width=3, height=3, walls=frozenset({(5, 5)}))
    with pytest.raises(ConfigError):
        EnvSpec(env_id="open_grid", width=4, height=4, max_episode_steps=0)


def test_action_range_checked(grid5):
    with pytest.raises(ConfigError):
        transition(grid5, grid_state(grid5, 0, 0), 4)


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "env.toml"
    path.write_text(
        'env = "walls_grid"\nwidth = 7\nheight = 6\n'
        "walls = [[3, 2], [3, 3]]\nmax_steps = 40\nseed = 9\n"
    )
    spec = load_env_spec(path)
    assert spec.env_id == "walls_grid"
    assert (spec.width, spec.height) == (7, 6)
    assert spec.walls == frozenset({(3, 2), (3, 3)})
    assert spec.max_episode_steps == 40 and spec.seed == 9
    assert env_spec_from_dict(spec_to_dict(spec)) == spec


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("width = 5\n")
    with pytest.raises(ConfigError):
        load_env_spec(bad)
    broken = tmp_path / "broken.toml"
    broken.write_text("env = [unterminated\n")
    with pytest.raises(ConfigError):
        load_env_spec(broken)


def test_free_cells_deterministic_order():
    spec = EnvSpec(env_id="open_grid", width=3, height=2)
    assert free_cells(spec) == [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]
