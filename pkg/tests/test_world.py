import json
import math

import numpy as np
import pytest

from ssnet.world import (
    DT,
    SCENARIO_KINDS,
    SCENE_FRAMES,
    DatasetError,
    generate_mix,
    generate_scenario,
    load_dataset,
    save_dataset,
    scene_to_dict,
    speed_change_profile,
    wrap_angle,
)
from ssnet.geometry import OrientedBox, obb_intersect


class TestGenerator:
    @pytest.mark.parametrize("kind", SCENARIO_KINDS)
    def test_layout(self, kind):
        scene = generate_scenario(kind, 3)
        assert len(scene.frames) == SCENE_FRAMES
        assert scene.scene_id == f"{kind}-3"
        np.testing.assert_allclose([f.timestamp for f in scene.frames[:3]], [0.0, 0.1, 0.2])
        ids = [a.track_id for a in scene.frames[0].agents]
        assert len(ids) == len(set(ids)) and 0 not in ids

    @pytest.mark.parametrize("kind", SCENARIO_KINDS)
    def test_logged_ego_is_collision_free(self, kind):
        for seed in range(5):
            scene = generate_scenario(kind, seed)
            for f in scene.frames:
                ego = OrientedBox.from_agent(f.ego)
                assert not any(obb_intersect(ego, OrientedBox.from_agent(a)) for a in f.agents)

    def test_deterministic(self):
        assert scene_to_dict(generate_scenario("cut-in", 11)) == scene_to_dict(generate_scenario("cut-in", 11))

    def test_seeds_differ(self):
        a, b = generate_scenario("straight", 1), generate_scenario("straight", 2)
        assert a.frames[0].ego.centroid != b.frames[0].ego.centroid

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_scenario("roundabout", 0)

    def test_mix_counts(self):
        scenes = generate_mix({"free": 2, "crossing": 1}, seed=0)
        assert sorted(s.kind for s in scenes) == ["crossing", "free", "free"]

    def test_velocity_matches_motion(self):
        scene = generate_scenario("straight", 0)
        f0, f1 = scene.frames[100].ego, scene.frames[101].ego
        speed = math.hypot(f1.centroid[0] - f0.centroid[0], f1.centroid[1] - f0.centroid[1]) / DT
        assert math.hypot(*f0.velocity) == pytest.approx(speed, rel=1e-6)

    def test_heading_follows_travel(self):
        scene = generate_scenario("free", 4)
        a, b = scene.frames[50].ego, scene.frames[51].ego
        travel = math.atan2(b.centroid[1] - a.centroid[1], b.centroid[0] - a.centroid[0])
        assert abs(wrap_angle(travel - a.yaw)) < 1e-6


class TestSpeedProfile:
    def test_constant_when_no_change(self):
        t = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(speed_change_profile(5.0, 1.0, 2.0, 5.0, 1.0, t), [1.0, 6.0, 11.0])

    def test_braking_stops_at_closed_form_distance(self):
        # v0 = 10, brake at 2 m/s^2 from t = 1: stops at 1 s + 5 s, 10 + 25 m
        s = speed_change_profile(10.0, 1.0, 2.0, 0.0, 0.0, np.array([0.5, 6.0, 9.0]))
        np.testing.assert_allclose(s, [5.0, 35.0, 35.0])

    def test_speed_up(self):
        s = speed_change_profile(0.0, 0.0, 1.0, 2.0, 0.0, np.array([2.0, 3.0]))
        np.testing.assert_allclose(s, [2.0, 4.0])


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        scenes = generate_mix({"lead-brake": 1, "crossing": 1}, seed=2)
        path = tmp_path / "d.jsonl"
        save_dataset(scenes, path)
        loaded = load_dataset(path)
        assert [scene_to_dict(s) for s in loaded] == [scene_to_dict(s) for s in scenes]
        assert loaded[1].start_index == SCENE_FRAMES and loaded[1].end_index == 2 * SCENE_FRAMES

    def test_bytes_are_stable(self, tmp_path):
        scenes = generate_mix({"free": 1}, seed=0)
        save_dataset(scenes, tmp_path / "a.jsonl")
        save_dataset(load_dataset(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = json.dumps(scene_to_dict(generate_scenario("free", 0)))
        path.write_text(good + "\n{not json\n")
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path)

    def test_missing_field(self, tmp_path):
        d = scene_to_dict(generate_scenario("free", 0))
        del d["frames"][3]["ego"]["cx"]
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(d) + "\n")
        with pytest.raises(DatasetError, match="line 1"):
            load_dataset(path)

    def test_unknown_keys_ignored(self, tmp_path):
        d = scene_to_dict(generate_scenario("free", 0))
        d["weather"] = "rain"
        d["frames"][0]["ego"]["accel"] = 1.0
        path = tmp_path / "extra.jsonl"
        path.write_text(json.dumps(d) + "\n")
        assert load_dataset(path)[0].scene_id == "free-0"


class TestWrapAngle:
    @pytest.mark.parametrize("a,expected", [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi), (7.0, 7.0 - 2 * math.pi)])
    def test_values(self, a, expected):
        assert wrap_angle(a) == pytest.approx(expected, abs=1e-12)
