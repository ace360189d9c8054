import json

import numpy as np
import pytest

from toolshed.errors import BadArgs, LoadError
from toolshed.fixtures import (
    QASpec,
    SceneFixture,
    ObjectAnnotation,
    fixture_from_doc,
    fixture_to_doc,
    load_dataset,
    read_dpth,
    save_dataset,
    write_dpth,
)
from toolshed.geometry import OrientedBox3
from toolshed.rewards import GraspKeypoints, Region


def tiny_fixture(fid="fx-0", with_depth=True):
    rng = np.random.default_rng(7)
    image = rng.integers(0, 255, size=(6, 8, 3), dtype=np.uint8)
    depth = rng.uniform(0.5, 2.0, size=(6, 8)).astype(np.float32) if with_depth else None
    mask = np.zeros((6, 8), dtype=bool)
    mask[2:5, 3:7] = True
    ann = ObjectAnnotation(
        points=((0.25, 0.5), (0.75, 0.5)),
        mask=mask,
        box3d=OrientedBox3(
            center=(0.1, -0.2, 1.5),
            axes=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
            extent=(0.3, 0.2, 0.1),
        ),
        grasp=GraspKeypoints((0.5, 0.5), (0.4, 0.5), (0.6, 0.5), (0.4, 0.7), (0.6, 0.7)),
        gripper_width=0.2,
    )
    qa = QASpec(task="choice", question="is there a thing?", answer="yes")
    return SceneFixture(
        id=fid, image=image, depth=depth, focal_length_px=80.0 if with_depth else None,
        objects={"thing": ann}, qa=qa, noise_seed=3,
    )


def assert_fixture_equal(a: SceneFixture, b: SceneFixture):
    assert a.id == b.id
    assert np.array_equal(a.image, b.image)
    if a.depth is None:
        assert b.depth is None
    else:
        assert np.array_equal(a.depth, b.depth)
        assert a.focal_length_px == b.focal_length_px
    assert a.noise_seed == b.noise_seed
    assert set(a.objects) == set(b.objects)
    for name, ann in a.objects.items():
        other = b.objects[name]
        assert ann.points == other.points
        if ann.mask is None:
            assert other.mask is None
        else:
            assert np.array_equal(ann.mask, other.mask)
        assert ann.box3d == other.box3d
        assert ann.grasp == other.grasp
        assert ann.gripper_width == other.gripper_width
    assert a.qa == b.qa


class TestDepthCodec:
    def test_round_trip(self, tmp_path):
        depth = np.linspace(0.5, 3.0, 12, dtype=np.float32).reshape(3, 4)
        write_dpth(tmp_path / "d.dpth", depth, 80.0)
        loaded, focal = read_dpth(tmp_path / "d.dpth")
        assert np.array_equal(loaded, depth)
        assert focal == 80.0

    def test_bad_magic(self, tmp_path):
        (tmp_path / "d.dpth").write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(BadArgs, match="magic"):
            read_dpth(tmp_path / "d.dpth")

    def test_truncated(self, tmp_path):
        depth = np.ones((3, 4), dtype=np.float32)
        write_dpth(tmp_path / "d.dpth", depth, 80.0)
        raw = (tmp_path / "d.dpth").read_bytes()
        (tmp_path / "d.dpth").write_bytes(raw[:-4])
        with pytest.raises(BadArgs, match="expected"):
            read_dpth(tmp_path / "d.dpth")


class TestDatasetRoundTrip:
    def test_full_round_trip(self, tmp_path):
        originals = [tiny_fixture("fx-0"), tiny_fixture("fx-1", with_depth=False)]
        save_dataset(originals, tmp_path)
        loaded = load_dataset(tmp_path)
        assert [f.id for f in loaded] == ["fx-0", "fx-1"]
        for a, b in zip(originals, loaded):
            assert_fixture_equal(a, b)

    def test_desk_dataset_loads(self, desk_dir):
        fixtures = load_dataset(desk_dir)
        assert len(fixtures) == 12
        tasks = [f.qa.task for f in fixtures]
        assert tasks.count("choice") == 6
        assert set(tasks) == {"choice", "point", "boxes", "pose", "grasp"}

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "manifest.jsonl").write_text("\n")
        assert load_dataset(tmp_path) == []

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(LoadError, match="missing manifest"):
            load_dataset(tmp_path / "nowhere")


class TestValidation:
    def test_violations_are_aggregated(self, tmp_path):
        save_dataset([tiny_fixture("good")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        lines = manifest.read_text().splitlines()
        lines.insert(0, "{not json")
        lines.append(json.dumps({"id": "ghost", "image": "ghost.png"}))
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(LoadError) as exc:
            load_dataset(tmp_path)
        msg = str(exc.value)
        assert "invalid JSON" in msg
        assert "ghost" in msg
        # both offenders reported in one pass
        assert len(exc.value.violations) == 2

    def test_duplicate_ids(self, tmp_path):
        save_dataset([tiny_fixture("twin")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        line = manifest.read_text().strip()
        manifest.write_text(line + "\n" + line + "\n")
        with pytest.raises(LoadError, match="duplicate id"):
            load_dataset(tmp_path)

    def test_depth_dim_mismatch(self, tmp_path):
        save_dataset([tiny_fixture("fx-0")], tmp_path)
        write_dpth(tmp_path / "fx-0.dpth", np.ones((2, 2), dtype=np.float32), 80.0)
        with pytest.raises(LoadError, match="do not match"):
            load_dataset(tmp_path)

    def test_mask_dim_mismatch(self, tmp_path):
        save_dataset([tiny_fixture("fx-0")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        entry = json.loads(manifest.read_text())
        entry["objects"]["thing"]["mask"]["width"] = 99
        manifest.write_text(json.dumps(entry) + "\n")
        with pytest.raises(LoadError, match="mask dims"):
            load_dataset(tmp_path)

    def test_bad_qa_task(self, tmp_path):
        save_dataset([tiny_fixture("fx-0")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        entry = json.loads(manifest.read_text())
        entry["qa"] = {"task": "riddle", "question": "?"}
        manifest.write_text(json.dumps(entry) + "\n")
        with pytest.raises(LoadError, match="unknown task"):
            load_dataset(tmp_path)

    def test_pose_corner_count(self, tmp_path):
        save_dataset([tiny_fixture("fx-0")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        entry = json.loads(manifest.read_text())
        entry["qa"] = {"task": "pose", "question": "?", "corners": [[0.1, 0.1]] * 7}
        manifest.write_text(json.dumps(entry) + "\n")
        with pytest.raises(LoadError, match="8 corners"):
            load_dataset(tmp_path)

    def test_point_outside_unit_square(self, tmp_path):
        save_dataset([tiny_fixture("fx-0")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        entry = json.loads(manifest.read_text())
        entry["qa"] = {"task": "point", "question": "?", "region": [[1.5, 0.5]]}
        manifest.write_text(json.dumps(entry) + "\n")
        with pytest.raises(LoadError, match="outside"):
            load_dataset(tmp_path)

    def test_unsorted_box(self, tmp_path):
        save_dataset([tiny_fixture("fx-0")], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        entry = json.loads(manifest.read_text())
        entry["qa"] = {"task": "boxes", "question": "?", "boxes": [[0.9, 0.1, 0.1, 0.5]]}
        manifest.write_text(json.dumps(entry) + "\n")
        with pytest.raises(LoadError, match="x1<x2"):
            load_dataset(tmp_path)


class TestInlineDoc:
    def test_round_trip(self):
        fx = tiny_fixture("doc-0")
        doc = fixture_to_doc(fx)
        json.dumps(doc)  # must be plain JSON
        assert_fixture_equal(fx, fixture_from_doc(doc))

    def test_round_trip_without_depth(self):
        fx = tiny_fixture("doc-1", with_depth=False)
        assert_fixture_equal(fx, fixture_from_doc(fixture_to_doc(fx)))

    def test_depth_size_check(self):
        doc = fixture_to_doc(tiny_fixture("doc-2"))
        doc["depth_f32"] = doc["depth_f32"][: len(doc["depth_f32"]) // 2]
        with pytest.raises(BadArgs, match="depth payload"):
            fixture_from_doc(doc)

    def test_desk_fixture_survives_doc(self, desk_fixtures):
        fx = next(f for f in desk_fixtures if f.qa.task == "grasp")
        assert_fixture_equal(fx, fixture_from_doc(fixture_to_doc(fx)))
