import json

import numpy as np
import pytest

from pcnn.data import (
    Augmentation,
    DatasetManifest,
    augment,
    gen_synthetic,
    input_features,
    read_points,
    sample_shape,
    write_points,
)
from pcnn.shapes import Box, Cylinder, Sphere, Torus, _apportion
from pcnn.train import RunConfig, subsample, write_log


class TestSurfaces:
    def test_sphere_sampler_on_surface(self, rng):
        pts = Sphere(2.0).sample(500, rng)
        assert np.max(np.abs(np.linalg.norm(pts, axis=1) - 2.0)) <= 1e-12

    def test_sphere_lattice_equal_areas(self):
        pts, areas = Sphere(1.0).lattice(300)
        assert pts.shape == (300, 3) and np.allclose(areas, 4 * np.pi / 300)
        assert np.max(np.abs(np.linalg.norm(pts, axis=1) - 1)) <= 1e-12

    def test_torus_on_surface(self, rng):
        torus = Torus(1.0, 0.35)
        for pts in (torus.sample(400, rng), torus.lattice(400)[0]):
            ring = np.hypot(pts[:, 0], pts[:, 1]) - 1.0
            assert np.max(np.abs(np.hypot(ring, pts[:, 2]) - 0.35)) <= 1e-12

    def test_torus_lattice_areas_sum(self):
        torus = Torus(1.0, 0.35)
        pts, areas = torus.lattice(1000)
        assert len(pts) == 1000 and areas.sum() == pytest.approx(torus.area, rel=1e-12)

    def test_normals_unit(self, rng):
        for s in (Sphere(1.0), Torus(1.0, 0.3), Box((0.3, 0.5, 0.7)), Cylinder(0.4, 0.9)):
            n = s.normal(s.sample(200, rng))
            assert np.allclose(np.linalg.norm(n, axis=1), 1.0)

    def test_curvatures(self):
        assert np.allclose(Sphere(2.0).mean_curvature(np.array([[2.0, 0, 0]])), 0.5)
        torus = Torus(1.0, 0.25)
        outer = torus.mean_curvature(np.array([[1.25, 0, 0]]))[0]
        assert outer == pytest.approx((1 + 0.5) / (2 * 0.25 * 1.25))

    def test_torus_rejects_bad_radii(self):
        with pytest.raises(ValueError):
            Torus(0.3, 0.5)

    def test_apportion(self):
        counts = _apportion(10, np.array([1.0, 1.0, 2.0]))
        assert counts.sum() == 10 and counts[2] == 5 and sorted(counts[:2]) == [2, 3]


class TestPointsFiles:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        pts = rng.normal(size=(50, 3)) * 1e3
        nrm = rng.normal(size=(50, 3))
        write_points(tmp_path / "a.pts", pts, nrm)
        p, n = read_points(tmp_path / "a.pts")
        assert np.array_equal(p, pts) and np.array_equal(n, nrm)
        write_points(tmp_path / "b.pts", pts)
        p, n = read_points(tmp_path / "b.pts")
        assert np.array_equal(p, pts) and n is None

    def test_bad_columns(self, tmp_path):
        (tmp_path / "c.pts").write_text("1 2\n3 4\n")
        with pytest.raises(ValueError):
            read_points(tmp_path / "c.pts")

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_points(tmp_path / "nope.pts")


class TestSynthetic:
    def test_layout_and_split(self, tmp_path):
        man = gen_synthetic(tmp_path, per_class=10, points=64, seed=1)
        assert len(list(tmp_path.glob("*.pts"))) == 40
        assert len(man.split("train")) == 32 and len(man.split("test")) == 8
        back = DatasetManifest.read(tmp_path)
        assert back.classes == ["sphere", "cube", "torus", "cylinder"] and back.seed == 1
        assert [r.path for r in back.records] == [r.path for r in man.records]

    def test_deterministic(self, tmp_path):
        gen_synthetic(tmp_path / "a", per_class=2, points=64, seed=5, normals=True)
        gen_synthetic(tmp_path / "b", per_class=2, points=64, seed=5, normals=True)
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_unit_scale(self, rng):
        pts, nrm = sample_shape("sphere", 64, rng)
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
        assert np.allclose(np.einsum("ij,ij->i", pts, nrm), 1.0)
        for kind in ("cube", "torus", "cylinder"):
            pts, _ = sample_shape(kind, 400, rng)
            assert np.max(np.linalg.norm(pts, axis=1)) <= 1.0 + 1e-12

    def test_argument_errors(self, tmp_path):
        with pytest.raises(ValueError):
            gen_synthetic(tmp_path, per_class=1)
        with pytest.raises(ValueError):
            gen_synthetic(tmp_path, points=8)
        with pytest.raises(ValueError):
            gen_synthetic(tmp_path, classes=["blob"])

    def test_manifest_errors(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("PCNNMANIFEST 1\nclasses a\nrecord x.pts 0 train\n")
        with pytest.raises(FileNotFoundError):
            DatasetManifest.read(tmp_path)
        (tmp_path / "manifest.txt").write_text("hello\n")
        with pytest.raises(ValueError):
            DatasetManifest.read(tmp_path)


class TestAugmentation:
    def test_identity(self, rng):
        pts = rng.normal(size=(30, 3))
        assert np.allclose(augment(pts, Augmentation(1.0, 1.0, 0.0), rng), pts)

    def test_translation_is_isometry(self, rng):
        pts = rng.normal(size=(30, 3))
        out = augment(pts, Augmentation(1.0, 1.0, 0.2), rng)
        d = lambda p: np.linalg.norm(p[:, None] - p[None], axis=-1)
        assert np.allclose(d(out), d(pts))
        assert np.all(np.abs(out - pts) <= 0.2)

    def test_scale_range(self, rng):
        cfg = Augmentation(0.66, 1.5, 0.0)
        s = np.array([np.diag(augment(np.eye(3), cfg, rng)) for _ in range(200)])
        assert s.min() >= 0.66 and s.max() <= 1.5

    def test_normals_follow_surface(self, rng):
        pts = Sphere(1.0).lattice(100)[0]
        nrm = pts.copy()
        out, n2 = augment(pts, Augmentation(0.5, 2.0, 0.1, rotate=True), rng, nrm)
        assert np.allclose(np.linalg.norm(n2, axis=1), 1.0)
        # tangent directions stay orthogonal to the mapped normals
        tangent = np.cross(nrm, [0.3, 0.4, 0.5])
        lin = np.linalg.lstsq(np.c_[pts, np.ones(100)], out, rcond=None)[0][:3]
        assert np.max(np.abs(np.einsum("ij,ij->i", tangent @ lin, n2))) <= 1e-10

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            Augmentation(1.5, 0.66)
        with pytest.raises(ValueError):
            Augmentation(translate=-0.1)

    def test_features(self, rng):
        pts = rng.normal(size=(5, 3))
        assert input_features(pts).shape == (5, 4)
        assert np.all(input_features(pts, True) == 1)


class TestRunConfig:
    def test_load_resolves_relative_paths(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"data": "d", "out_dir": "o", "epochs": 3}))
        cfg = RunConfig.load(tmp_path / "c.json")
        assert cfg.data == str(tmp_path / "d") and cfg.epochs == 3 and cfg.lr == 1e-3

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"epoch": 3}))
        with pytest.raises(ValueError):
            RunConfig.load(tmp_path / "c.json")

    @pytest.mark.parametrize("bad", [dict(arch="gan"), dict(lr=0.0), dict(epochs=0),
                                     dict(precision="f16"), dict(scale_low=2.0)])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            RunConfig(**bad)

    def test_round_trip(self, tmp_path):
        cfg = RunConfig(epochs=4, hyper={"channels": [8, 8, 8]})
        cfg.save(tmp_path / "c.json")
        assert RunConfig.load(tmp_path / "c.json").hyper == cfg.hyper


class TestHelpers:
    def test_subsample(self, rng):
        clouds = [rng.normal(size=(20, 3)) for _ in range(3)]
        sub = subsample(clouds, 5, seed=2)
        assert all(s.shape == (5, 3) for s in sub)
        assert all(any(np.array_equal(row, c[j]) for j in range(20)) for s, c in zip(sub, clouds) for row in s)
        assert all(np.array_equal(a, b) for a, b in zip(sub, subsample(clouds, 5, seed=2)))

    def test_log_format(self, tmp_path):
        write_log(tmp_path / "log.csv", [(0, "train", 1.5, 0.25), (0, "test", 0.1, 1.0)])
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines == ["epoch,split,loss,metric", "0,train,1.5,0.25", "0,test,0.1,1.0"]
