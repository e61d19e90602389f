"""Benchmark dataset container and its versioned JSON file format.

A dataset is a list of scenes, each tagged ``train`` or ``test`` and holding
single-homography test cases.  Correspondence arrays are written inline or,
with ``sidecar=True``, into an ``.npz`` file next to the JSON document.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from homkit.correspondences import Correspondences
from homkit.geom import Pose
from homkit.synth import SceneConfig, TestCase, ValidationConfig, generate_scene, validate_homography

FORMAT_NAME = "homkit-dataset"
FORMAT_VERSION = 1
SPLITS = ("train", "test")


class DatasetFormatError(ValueError):
    pass


class DatasetWarning(UserWarning):
    pass


@dataclass
class SceneRecord:
    name: str
    split: str
    cases: list

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetFormatError(f"scene {self.name!r}: split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class Dataset:
    scenes: list
    version: int = FORMAT_VERSION
    # (scene name, case id, reason) of cases removed at load time
    quarantine: list = field(default_factory=list)

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.scenes if s.split == name]

    @property
    def n_cases(self):
        return sum(len(s.cases) for s in self.scenes)

    def __eq__(self, other):
        if not isinstance(other, Dataset) or self.version != other.version:
            return False
        if len(self.scenes) != len(other.scenes):
            return False
        for a, b in zip(self.scenes, other.scenes):
            if (a.name, a.split, len(a.cases)) != (b.name, b.split, len(b.cases)):
                return False
            if not all(_case_equal(x, y) for x, y in zip(a.cases, b.cases)):
                return False
        return True


def _case_equal(a: TestCase, b: TestCase):
    arrays = [
        (a.correspondences.data, b.correspondences.data),
        (a.gt_homography, b.gt_homography),
        (a.gt_pose.rotation, b.gt_pose.rotation),
        (a.gt_pose.translation, b.gt_pose.translation),
        (a.K1, b.K1),
        (a.K2, b.K2),
        (a.inliers, b.inliers),
    ]
    return (
        a.case_id == b.case_id
        and a.scene_scale == b.scene_scale
        and all(x.shape == y.shape and np.array_equal(x, y, equal_nan=True) for x, y in arrays)
    )


def _case_to_json(case: TestCase, sidecar, key):
    d = {
        "id": case.case_id,
        "gt_homography": case.gt_homography.tolist(),
        "gt_pose": {"rotation": case.gt_pose.rotation.tolist(), "translation": case.gt_pose.translation.tolist()},
        "K1": case.K1.tolist(),
        "K2": case.K2.tolist(),
        "scene_scale": float(case.scene_scale),
        "inliers": np.asarray(case.inliers, dtype=int).tolist(),
    }
    if sidecar is None:
        d["correspondences"] = case.correspondences.data.tolist()
    else:
        sidecar[key] = case.correspondences.data
        d["correspondences"] = {"npz": key}
    return d


def save_dataset(ds: Dataset, path, sidecar=False):
    """Write ``ds`` as JSON (plus ``<path>.npz`` when ``sidecar``); returns the JSON path."""
    path = Path(path)
    arrays = {} if sidecar else None
    doc = {
        "format": FORMAT_NAME,
        "version": ds.version,
        "scenes": [
            {
                "name": s.name,
                "split": s.split,
                "cases": [_case_to_json(c, arrays, f"s{i}_c{j}") for j, c in enumerate(s.cases)],
            }
            for i, s in enumerate(ds.scenes)
        ],
    }
    if sidecar:
        doc["sidecar"] = path.name + ".npz"
        with open(path.with_name(path.name + ".npz"), "wb") as f:
            np.savez(f, **arrays)
    path.write_text(json.dumps(doc, indent=1))
    return path


def _array(value, where, shape=None):
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{where}: not a numeric array") from exc
    if shape is not None and a.shape != shape:
        raise DatasetFormatError(f"{where}: expected shape {shape}, got {a.shape}")
    return a


def _case_from_json(d, where, sidecar):
    try:
        raw = d["correspondences"]
        if isinstance(raw, dict):
            if sidecar is None:
                raise DatasetFormatError(f"{where}.correspondences: sidecar reference without a sidecar file")
            data = sidecar[raw["npz"]]
        else:
            data = _array(raw, f"{where}.correspondences")
        if data.ndim != 2 or data.shape[1] not in (9, 10):
            raise DatasetFormatError(f"{where}.correspondences: expected 9 or 10 columns, got shape {data.shape}")
        pose = d["gt_pose"]
        return TestCase(
            correspondences=Correspondences(data),
            gt_homography=_array(d["gt_homography"], f"{where}.gt_homography", (3, 3)),
            gt_pose=Pose(
                _array(pose["rotation"], f"{where}.gt_pose.rotation", (3, 3)),
                _array(pose["translation"], f"{where}.gt_pose.translation", (3,)),
            ),
            K1=_array(d["K1"], f"{where}.K1", (3, 3)),
            K2=_array(d["K2"], f"{where}.K2", (3, 3)),
            scene_scale=float(d.get("scene_scale", 1.0)),
            inliers=np.asarray(d.get("inliers", []), dtype=int),
            case_id=str(d.get("id", "")),
        )
    except KeyError as exc:
        raise DatasetFormatError(f"{where}: missing field {exc.args[0]!r}") from None
    except DatasetFormatError:
        raise
    except (ValueError, TypeError) as exc:
        raise DatasetFormatError(f"{where}: {exc}") from None


def load_dataset(path, validate=True, vcfg: ValidationConfig = ValidationConfig()) -> Dataset:
    """Read a dataset file.

    With ``validate``, cases whose ground truth fails the homography
    validation are moved to ``Dataset.quarantine`` and reported with a
    :class:`DatasetWarning`.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(
            f"{path}: parse error at line {exc.lineno} column {exc.colno} (offset {exc.pos}): {exc.msg}"
        ) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}: not a {FORMAT_NAME} document")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version!r}")
    sidecar = None
    if "sidecar" in doc:
        side = path.with_name(doc["sidecar"])
        if not side.exists():
            raise DatasetFormatError(f"{path}: sidecar {side.name} not found")
        with np.load(side) as z:
            sidecar = {k: z[k] for k in z.files}

    scenes, quarantine = [], []
    for i, s in enumerate(doc.get("scenes", [])):
        where = f"scenes[{i}]"
        if "split" not in s:
            raise DatasetFormatError(f"{where}: missing field 'split'")
        cases = []
        for j, c in enumerate(s.get("cases", [])):
            case = _case_from_json(c, f"{where}.cases[{j}]", sidecar)
            if validate:
                res = validate_homography(case, vcfg)
                if not res.accepted:
                    quarantine.append((s.get("name", str(i)), case.case_id, res.reason))
                    warnings.warn(
                        f"{where}.cases[{j}] ({case.case_id!r}) quarantined: {res.reason}", DatasetWarning, stacklevel=2
                    )
                    continue
            cases.append(case)
        scenes.append(SceneRecord(str(s.get("name", i)), s["split"], cases))
    return Dataset(scenes, version, quarantine)


def synth_dataset(n_train=2, n_test=4, pairs_per_scene=10, scene_config: SceneConfig = SceneConfig(), seed=0) -> Dataset:
    """Synthetic dataset; every scene is a group of independently generated pairs."""
    scenes = []
    for k in range(n_train + n_test):
        cases = []
        for p in range(pairs_per_scene):
            pair_seed = int(np.random.SeedSequence([seed, k, p]).generate_state(1)[0])
            scene = generate_scene(dataclasses.replace(scene_config, seed=pair_seed))
            for j, case in enumerate(scene.cases):
                case.case_id = f"scene{k:03d}-pair{p:03d}-h{j}"
                cases.append(case)
        scenes.append(SceneRecord(f"scene{k:03d}", "train" if k < n_train else "test", cases))
    return Dataset(scenes)
