import dataclasses
import json

import numpy as np
import pytest

from homkit.dataset import (
    Dataset,
    DatasetFormatError,
    DatasetWarning,
    SceneRecord,
    load_dataset,
    save_dataset,
    synth_dataset,
)
from homkit.geom import Pose
from homkit.synth import SceneConfig


@pytest.fixture(scope="module")
def small():
    return synth_dataset(n_train=1, n_test=2, pairs_per_scene=3, scene_config=SceneConfig(points_per_plane=30), seed=5)


def test_synth_dataset_layout(small):
    assert [s.split for s in small.scenes] == ["train", "test", "test"]
    assert small.n_cases == 9 and len(small.split("test")) == 2
    ids = [c.case_id for s in small.scenes for c in s.cases]
    assert len(set(ids)) == len(ids)
    again = synth_dataset(n_train=1, n_test=2, pairs_per_scene=3, scene_config=SceneConfig(points_per_plane=30), seed=5)
    assert again == small
    with pytest.raises(ValueError):
        small.split("val")


@pytest.mark.parametrize("sidecar", [False, True])
def test_round_trip(small, tmp_path, sidecar):
    path = save_dataset(small, tmp_path / "ds.json", sidecar=sidecar)
    assert (tmp_path / "ds.json.npz").exists() == sidecar
    back = load_dataset(path, validate=False)
    assert back == small and back.quarantine == []


def test_truncated_file_reports_offset(small, tmp_path):
    path = save_dataset(small, tmp_path / "ds.json")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(DatasetFormatError, match=r"offset \d+"):
        load_dataset(path)


def test_missing_field_names_path(small, tmp_path):
    path = save_dataset(small, tmp_path / "ds.json")
    doc = json.loads(path.read_text())
    del doc["scenes"][1]["cases"][2]["K2"]
    path.write_text(json.dumps(doc))
    with pytest.raises(DatasetFormatError, match=r"scenes\[1\]\.cases\[2\]: missing field 'K2'"):
        load_dataset(path)


def test_bad_shape_and_columns(small, tmp_path):
    path = save_dataset(small, tmp_path / "ds.json")
    doc = json.loads(path.read_text())
    doc["scenes"][0]["cases"][0]["gt_homography"] = [[1, 0], [0, 1]]
    doc["scenes"][0]["cases"][1]["correspondences"] = [[0.0] * 5]
    path.write_text(json.dumps(doc))
    with pytest.raises(DatasetFormatError, match=r"gt_homography: expected shape \(3, 3\)"):
        load_dataset(path)
    doc["scenes"][0]["cases"][0] = json.loads(save_dataset(small, tmp_path / "b.json").read_text())["scenes"][0]["cases"][0]
    path.write_text(json.dumps(doc))
    with pytest.raises(DatasetFormatError, match="9 or 10 columns"):
        load_dataset(path)


def test_version_and_format_checks(small, tmp_path):
    path = save_dataset(small, tmp_path / "ds.json")
    doc = json.loads(path.read_text())
    path.write_text(json.dumps(dict(doc, version=99)))
    with pytest.raises(DatasetFormatError, match="unsupported version"):
        load_dataset(path)
    path.write_text(json.dumps(dict(doc, format="other")))
    with pytest.raises(DatasetFormatError, match="not a homkit-dataset"):
        load_dataset(path)
    path.write_text(json.dumps(dict(doc, sidecar="missing.npz")))
    with pytest.raises(DatasetFormatError, match="sidecar"):
        load_dataset(path)
    with pytest.raises(DatasetFormatError, match="split"):
        SceneRecord("x", "val", [])


def test_invalid_ground_truth_is_quarantined(small, tmp_path):
    bad = small.scenes[1].cases[0]
    rot = bad.gt_pose.rotation @ np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    scenes = [dataclasses.replace(s, cases=list(s.cases)) for s in small.scenes]
    scenes[1].cases[0] = dataclasses.replace(bad, gt_pose=Pose(rot, bad.gt_pose.translation))
    path = save_dataset(Dataset(scenes), tmp_path / "ds.json")
    with pytest.warns(DatasetWarning, match="pose inconsistent"):
        ds = load_dataset(path)
    assert (ds.scenes[1].name, bad.case_id, "pose inconsistent") in ds.quarantine
    assert bad.case_id not in [c.case_id for c in ds.scenes[1].cases]
