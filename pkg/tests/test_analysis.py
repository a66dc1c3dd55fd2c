from dataclasses import replace

import numpy as np
import pytest

from ffdi.modules.analysis import (
    ABLATION_ROWS,
    ExperimentTable,
    a_distance,
    ablate_fdag,
    ablation_suite,
    band_features,
    compare_augmentation,
    compare_interaction,
    export_features,
    frequency_a_distance,
    held_out_domains,
    sweep_r,
)
from ffdi.modules.config import load_train_config
from ffdi.modules.data import build_dataset
from ffdi.modules.errors import ConfigurationError, DataError, ShapeError
from ffdi.modules.model import FfdiModel


@pytest.fixture
def suite_cfg(tiny_train_cfg):
    return replace(tiny_train_cfg, iterations=1, suite_held_out=("sketch",), prefetch=0)


class TestADistance:
    def test_same_distribution_is_small(self, rng):
        a, b = rng.normal(size=(200, 5)), rng.normal(size=(200, 5))
        assert a_distance(a, b) < 0.5

    def test_separated_sets_are_far(self, rng):
        a = rng.normal(size=(100, 4))
        b = rng.normal(size=(100, 4)) + 5.0
        assert a_distance(a, b) > 1.7
        assert a_distance(b, a) > 1.7

    def test_bounds(self, rng):
        for seed in range(3):
            value = a_distance(rng.normal(size=(20, 3)), rng.normal(size=(30, 3)), seed=seed)
            assert 0.0 <= value <= 2.0

    def test_seeded(self, rng):
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) + 0.5
        assert a_distance(a, b, seed=4) == a_distance(a, b, seed=4)

    def test_symmetric_for_a_fixed_seed(self, rng):
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(30, 3)) + 0.4
        for seed in range(3):
            assert a_distance(a, b, seed=seed) == a_distance(b, a, seed=seed)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            a_distance(rng.normal(size=(10, 3)), rng.normal(size=(10, 4)))

    def test_too_few_samples(self, rng):
        with pytest.raises(DataError):
            a_distance(rng.normal(size=(1, 3)), rng.normal(size=(10, 3)))


class TestBandFeatures:
    def test_pooled_shape(self, rng):
        features = band_features(rng.uniform(size=(5, 3, 32, 32)), 8, "high")
        assert features.shape == (5, 48)

    def test_bands_sum_to_pooled_image(self, rng):
        images = rng.uniform(size=(2, 3, 16, 16))
        total = band_features(images, 3, "high", pool=4) + band_features(images, 3, "low", pool=4)
        expected = images.reshape(2, 3, 4, 4, 4, 4).mean(axis=(3, 5)).reshape(2, -1)
        np.testing.assert_allclose(total, expected, atol=1e-9)

    def test_pool_must_divide(self, rng):
        with pytest.raises(ShapeError):
            band_features(rng.uniform(size=(1, 3, 10, 10)), 2, "low", pool=4)

    def test_frequency_table(self, tiny_dataset):
        result = frequency_a_distance(tiny_dataset, 8, seeds=(0,))
        assert [(p["domain_a"], p["domain_b"]) for p in result.pairs] == [
            ("flat", "gradient"),
            ("flat", "sketch"),
            ("gradient", "sketch"),
        ]
        assert 0.0 <= result.high <= 2.0 and 0.0 <= result.low <= 2.0

    @pytest.mark.slow
    def test_high_band_is_more_domain_invariant(self):
        dataset = build_dataset(per_class_per_domain=40)
        result = frequency_a_distance(dataset, 8)
        assert result.high < result.low


class TestTables:
    def test_columns_and_lookup(self):
        table = ExperimentTable("t", ["r"], ["flat", "sketch"], rows=[{"r": 2, "flat": 0.5, "sketch": 0.3, "average": 0.4}])
        assert table.columns == ["r", "flat", "sketch", "average"]
        assert table.row(r=2)["average"] == 0.4
        with pytest.raises(KeyError):
            table.row(r=3)

    def test_held_out_defaults_to_every_domain(self, tiny_dataset, tiny_train_cfg):
        assert held_out_domains(tiny_dataset, tiny_train_cfg) == ["flat", "gradient", "sketch"]

    def test_unknown_held_out(self, tiny_dataset, tiny_train_cfg):
        with pytest.raises(DataError):
            held_out_domains(tiny_dataset, replace(tiny_train_cfg, suite_held_out=("texture",)))

    def test_sweep_needs_values(self, tiny_dataset, suite_cfg):
        with pytest.raises(ConfigurationError):
            sweep_r(tiny_dataset, suite_cfg, [])

    def test_sweep_rows(self, tiny_dataset, suite_cfg):
        table = sweep_r(tiny_dataset, suite_cfg, [2, 16])
        assert [row["r"] for row in table.rows] == [2, 16]
        assert table.columns == ["r", "sketch", "average"]
        for row in table.rows:
            assert row["average"] == row["sketch"]

    def test_ablation_rows(self, tiny_dataset, suite_cfg):
        table = ablation_suite(tiny_dataset, suite_cfg)
        assert [row["configuration"] for row in table.rows] == [label for label, _ in ABLATION_ROWS]
        assert all(0.0 <= row["average"] <= 1.0 for row in table.rows)

    def test_deepall_row_is_reproducible(self, tiny_dataset, suite_cfg):
        first = ablation_suite(tiny_dataset, suite_cfg).row(configuration="DeepAll")
        second = ablation_suite(tiny_dataset, suite_cfg).row(configuration="DeepAll")
        assert first == second

    def test_interaction_rows(self, tiny_dataset, suite_cfg):
        table = compare_interaction(tiny_dataset, suite_cfg, modes=("addition", "iim"))
        assert [row["interaction"] for row in table.rows] == ["addition", "iim"]

    def test_fdag_rows(self, tiny_dataset, suite_cfg):
        table = ablate_fdag(tiny_dataset, suite_cfg)
        assert len(table.rows) == 8
        assert table.row(model="FFDI", noise_target="phase")["model"] == "FFDI"

    def test_augmentation_rows(self, tiny_dataset, suite_cfg):
        table = compare_augmentation(tiny_dataset, suite_cfg)
        assert [(row["model"], row["augmentation"]) for row in table.rows][:3] == [
            ("DeepAll", "standard"),
            ("DeepAll", "time_noise"),
            ("DeepAll", "fdag"),
        ]
        assert len(table.rows) == 6


class TestExportFeatures:
    def test_rows(self, small_model_cfg, tiny_dataset):
        model = FfdiModel(small_model_cfg)
        data = tiny_dataset.domain("flat")
        header, rows = export_features(model, data.images[:4], data.labels[:4], ["flat"] * 4, "f_H")
        assert header[:3] == ["domain", "label", "f_H_0"]
        assert len(header) == 2 + small_model_cfg.feature_channels
        assert len(rows) == 4 and rows[0][0] == "flat"

    def test_length_mismatch(self, small_model_cfg, tiny_dataset):
        data = tiny_dataset.domain("flat")
        with pytest.raises(ShapeError):
            export_features(FfdiModel(small_model_cfg), data.images[:3], data.labels[:3], ["flat"] * 2, "f_E")


@pytest.mark.slow
def test_ffdi_generalizes_better_than_deepall():
    cfg = load_train_config(overrides=["suite_held_out=sketch", "workers=4"], environ={})
    dataset = build_dataset()
    table = ablation_suite(dataset, cfg)
    deepall = table.row(configuration="DeepAll")["average"]
    assert table.row(configuration="FFDI")["average"] >= deepall + 0.05
    assert table.row(configuration="DeepAll+FDAG")["average"] >= deepall + 0.02
    assert table.row(configuration="H+L+IIM")["average"] >= deepall + 0.02
