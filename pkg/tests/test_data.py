import csv
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from ffdi.modules.data import (
    CLASSES,
    PRESET_DOMAINS,
    DomainSpec,
    Pose,
    augment_standard,
    build_dataset,
    check_pose,
    gaussian_blur,
    load_dataset_dir,
    preset_domain,
    render_sample,
    sample_pose,
    shape_name,
    write_dataset_dir,
)
from ffdi.modules.errors import ConfigurationError, DataError
from ffdi.modules.spectral import decompose, decompose_batch
from ffdi.modules.utils import child_rng, child_seed

CIRCLE_POSES = (
    Pose(16, 16, 9),
    Pose(14.3, 17.6, 8.2, 0.4),
    Pose(17.9, 15.1, 10.4, 1.1),
    Pose(13.2, 14.4, 7.3, 2.0),
)


def _energy(band):
    return float((band ** 2).sum())


def _relative_gap(a, b):
    return abs(a - b) / max(a, b)


class TestDomains:
    def test_presets_validate(self):
        for name, spec in PRESET_DOMAINS.items():
            assert spec.validate().name == name

    def test_unknown_domain(self):
        with pytest.raises(ConfigurationError):
            preset_domain("watercolor")

    def test_extra_domain_available(self):
        assert preset_domain("radial").fill == "hatched"

    def test_bad_fill(self):
        with pytest.raises(ConfigurationError):
            DomainSpec(name="odd", fill="dotted").validate()

    def test_dict_round_trip(self):
        spec = preset_domain("gradient")
        assert DomainSpec.from_dict(spec.to_dict()) == spec


class TestRender:
    def test_range_and_shape(self, rng):
        image = render_sample("star", preset_domain("texture"), Pose(16, 16, 9, 0.3), rng)
        assert image.shape == (3, 32, 32)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_flat_background_is_exact(self, rng):
        spec = preset_domain("flat")
        image = render_sample("square", spec, Pose(16, 16, 8), rng)
        np.testing.assert_allclose(image[:, 0, 0], spec.background_color)
        np.testing.assert_allclose(image[:, 31, 31], spec.background_color)

    def test_sketch_interior_stays_white(self, rng):
        image = render_sample("circle", preset_domain("sketch"), Pose(16, 16, 10), rng)
        np.testing.assert_allclose(image[:, 16, 16], 1.0)
        assert image.min() < 0.6

    def test_outline_darkens_every_domain_alike(self):
        pose = Pose(16, 16, 9)
        drops = []
        for name in ("flat", "sketch"):
            spec = preset_domain(name)
            bare = render_sample("circle", replace(spec, edge_depth=0.0), pose, np.random.default_rng(0))
            drops.append(bare - render_sample("circle", spec, pose, np.random.default_rng(0)))
        np.testing.assert_allclose(drops[0], drops[1], atol=1e-12)
        assert drops[0].max() > 0.4

    @pytest.mark.parametrize("name", sorted(PRESET_DOMAINS) + ["radial"])
    def test_paint_never_clips_under_the_outline(self, name):
        spec = preset_domain(name)
        assert spec.darkest_paint() >= spec.edge_depth
        assert max(max(spec.background_color), max(spec.background_color2), max(spec.fill_color)) <= 1.0

    def test_edge_depth_range(self):
        with pytest.raises(ConfigurationError, match="edge depth"):
            DomainSpec(name="odd", edge_depth=1.5).validate()

    def test_pose_outside_canvas(self, rng):
        with pytest.raises(DataError):
            render_sample("circle", preset_domain("flat"), Pose(2, 16, 8), rng)

    def test_non_positive_scale(self):
        with pytest.raises(DataError):
            check_pose(Pose(16, 16, 0))

    def test_shape_names(self):
        assert shape_name(2) == "triangle"
        with pytest.raises(DataError):
            shape_name(9)
        with pytest.raises(DataError):
            shape_name("hexagon")

    @pytest.mark.parametrize("name", sorted(PRESET_DOMAINS))
    def test_high_frequency_energy_sits_on_the_outline(self, name):
        yy, xx = np.mgrid[0:32, 0:32] + 0.5
        inside_band = total = 0.0
        for index, pose in enumerate(CIRCLE_POSES):
            image = render_sample("circle", preset_domain(name), pose, np.random.default_rng(index))
            _, hfi = decompose(image, 8)
            power = (hfi ** 2).sum(axis=0)
            distance = np.abs(np.hypot(xx - pose.cx, yy - pose.cy) - pose.scale)
            inside_band += power[distance <= 2.0].sum()
            total += power.sum()
        assert inside_band / total >= 0.8

    def test_blur_keeps_constants(self):
        flat = np.full((3, 8, 8), 0.3)
        np.testing.assert_allclose(gaussian_blur(flat, 1.5), flat)
        assert gaussian_blur(flat, 0.0) is flat

    def test_wrap_blur_keeps_total(self, rng):
        image = rng.uniform(size=(1, 16, 16))
        assert gaussian_blur(image, 2.0, mode="wrap").sum() == pytest.approx(image.sum())


class TestStyleInvariants:
    @pytest.mark.parametrize("pair", list(combinations(sorted(PRESET_DOMAINS), 2)), ids="-".join)
    def test_styles_move_low_band_more_than_high_band(self, pair):
        gaps = {"energy_high": [], "energy_low": [], "diff_high": [], "diff_low": []}
        for cls in range(len(CLASSES)):
            for index in range(3):
                pose = sample_pose(child_rng(11, cls, index))
                bands = []
                for d_index, name in enumerate(pair):
                    image = render_sample(cls, preset_domain(name), pose, child_rng(12, d_index, cls, index))
                    bands.append(decompose(image, 8))
                (lfi_a, hfi_a), (lfi_b, hfi_b) = bands
                gaps["energy_high"].append(_relative_gap(_energy(hfi_a), _energy(hfi_b)))
                gaps["energy_low"].append(_relative_gap(_energy(lfi_a), _energy(lfi_b)))
                gaps["diff_high"].append(_energy(hfi_a - hfi_b) / max(_energy(hfi_a), _energy(hfi_b)))
                gaps["diff_low"].append(_energy(lfi_a - lfi_b) / max(_energy(lfi_a), _energy(lfi_b)))
        mean = {key: np.mean(values) for key, values in gaps.items()}
        assert mean["energy_high"] <= 0.5 * mean["energy_low"]
        assert mean["diff_high"] <= 0.5 * mean["diff_low"]

    def test_high_band_class_centroids_agree_across_domains(self):
        dataset = build_dataset(classes=3, per_class_per_domain=6, seed=2)
        centroids = {"high": [], "low": []}
        for data in dataset.domains:
            lfi, hfi = decompose_batch(data.images, 8)
            for key, band in (("high", hfi), ("low", lfi)):
                centroids[key].append(np.stack([band[data.labels == c].mean(axis=0) for c in range(3)]))

        def spread(stack):
            return np.mean([np.linalg.norm(a - b) for a, b in combinations(stack, 2)])

        assert spread(centroids["high"]) < spread(centroids["low"])


class TestBuild:
    def test_counts_and_split(self):
        dataset = build_dataset(domains=["flat"], classes=5, per_class_per_domain=10, seed=3)
        data = dataset.domain("flat")
        assert len(dataset) == 50
        assert len(data.train_idx) == 40 and len(data.test_idx) == 10
        assert set(data.train_idx).isdisjoint(data.test_idx)
        assert np.bincount(data.labels[data.test_idx]).tolist() == [2] * 5

    def test_ids(self, tiny_dataset):
        assert tiny_dataset.domain("gradient").ids[6] == "gradient/square/1"

    def test_deterministic(self, tiny_dataset):
        again = build_dataset(domains=["flat", "gradient", "sketch"], classes=3, per_class_per_domain=5, seed=0)
        for a, b in zip(tiny_dataset.domains, again.domains):
            np.testing.assert_array_equal(a.images, b.images)
            np.testing.assert_array_equal(a.train_idx, b.train_idx)

    def test_seed_changes_images(self, tiny_dataset):
        other = build_dataset(domains=["flat"], classes=3, per_class_per_domain=5, seed=1)
        assert not np.array_equal(other.domain("flat").images, tiny_dataset.domain("flat").images)

    def test_unknown_domain_lookup(self, tiny_dataset):
        with pytest.raises(DataError):
            tiny_dataset.domain("texture")

    def test_unknown_split(self, tiny_dataset):
        with pytest.raises(DataError):
            tiny_dataset.domain("flat").split("validation")

    def test_invalid_class_count(self):
        with pytest.raises(ConfigurationError):
            build_dataset(classes=len(CLASSES) + 1, per_class_per_domain=1)

    @pytest.mark.slow
    def test_full_benchmark_size(self):
        dataset = build_dataset()
        assert len(dataset) == 2400
        for data in dataset.domains:
            assert len(data.train_idx) == 480 and len(data.test_idx) == 120


class TestAugment:
    def test_identity_settings(self, rng):
        image = rng.uniform(size=(3, 8, 8))
        np.testing.assert_allclose(augment_standard(image, rng, flip=False, factors=np.ones(3)), image)

    def test_double_flip(self, rng):
        image = rng.uniform(size=(3, 8, 8))
        once = augment_standard(image, rng, flip=True, factors=np.ones(3))
        np.testing.assert_allclose(once, image[:, :, ::-1])
        np.testing.assert_allclose(augment_standard(once, rng, flip=True, factors=np.ones(3)), image)

    def test_random_output_in_range(self, rng):
        out = augment_standard(np.ones((3, 8, 8)), rng)
        assert out.max() <= 1.0 and out.min() >= 0.9 - 1e-12


class TestDatasetDirectory:
    def test_write_then_load(self, tmp_path):
        dataset = build_dataset(domains=["flat", "sketch"], classes=2, per_class_per_domain=5, seed=4)
        write_dataset_dir(dataset, str(tmp_path))
        assert (tmp_path / "flat" / "circle" / "0.ppm").is_file()
        loaded = load_dataset_dir(str(tmp_path))
        assert loaded.domain_names == ["flat", "sketch"]
        assert loaded.num_classes == 2 and loaded.seed == 4
        for original, restored in zip(dataset.domains, loaded.domains):
            assert np.abs(original.images - restored.images).max() <= 1.0 / 510 + 1e-12
            np.testing.assert_array_equal(original.labels, restored.labels)
            np.testing.assert_array_equal(original.test_idx, restored.test_idx)
            assert restored.spec == original.spec

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_dataset_dir(str(tmp_path))

    def test_bad_manifest_row(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("path,domain,class,split\nx.ppm,flat,hexagon,train\n")
        with pytest.raises(DataError, match="hexagon"):
            load_dataset_dir(str(tmp_path))

    def test_manifest_records_sample_seeds(self, tmp_path):
        dataset = build_dataset(domains=["flat", "texture"], classes=2, per_class_per_domain=2, seed=5)
        write_dataset_dir(dataset, str(tmp_path))
        with open(tmp_path / "manifest.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        texture = [row for row in rows if row["domain"] == "texture"]
        assert [int(row["seed"]) for row in texture] == [child_seed(5, 2, 1, c, i) for c in range(2) for i in range(2)]
        assert len({row["seed"] for row in rows}) == len(rows)
        # the recorded seed replays the render
        pose = sample_pose(child_rng(5, 1, 1, 0))
        again = render_sample(1, preset_domain("texture"), pose, np.random.default_rng(int(texture[2]["seed"])))
        np.testing.assert_array_equal(again, dataset.domain("texture").images[2])
        assert load_dataset_dir(str(tmp_path)).domain("texture").seeds == dataset.domain("texture").seeds
