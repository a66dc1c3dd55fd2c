from dataclasses import replace

import numpy as np
import pytest

from ffdi.modules.config import FfdiConfig, NoiseConfig, TrainConfig
from ffdi.modules.data import build_dataset, write_dataset_dir
from ffdi.modules.errors import ConfigurationError, DataError
from ffdi.modules.model import FfdiModel, recombine_total
from ffdi.modules.training import (
    BatchProducer,
    RunReport,
    confusion_matrix,
    dataset_for,
    evaluate,
    make_batch,
    source_domains,
    time_domain_noise,
    train_lodo,
)


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    cfg = TrainConfig(
        model=FfdiConfig(num_classes=3, encoder_widths=(4, 6, 8, 8), decoder_widths=(6, 4), iim_kernel=3),
        iterations=3,
        batch_per_domain=2,
        milestones=(2,),
        held_out="sketch",
        domains=("flat", "gradient", "sketch"),
        per_class_per_domain=5,
        out_dir=str(tmp_path_factory.mktemp("run")),
        log_every=1,
    ).validate()
    return cfg, train_lodo(tiny_dataset, "sketch", cfg)


class TestSources:
    def test_held_out_excluded(self, tiny_dataset, tiny_train_cfg):
        assert source_domains(tiny_dataset, "sketch", tiny_train_cfg) == ["flat", "gradient"]

    def test_unknown_held_out(self, tiny_dataset, tiny_train_cfg):
        with pytest.raises(DataError, match="watercolor"):
            source_domains(tiny_dataset, "watercolor", tiny_train_cfg)

    def test_single_source_rejected(self, tiny_dataset, tiny_train_cfg):
        cfg = replace(tiny_train_cfg, domains=("flat", "sketch"))
        with pytest.raises(DataError, match="at least two"):
            source_domains(tiny_dataset, "sketch", cfg)


class TestBatches:
    def test_balanced_and_reproducible(self, tiny_dataset, tiny_train_cfg):
        batch, ids = make_batch(tiny_dataset, ["flat", "gradient"], tiny_train_cfg, 4)
        again, again_ids = make_batch(tiny_dataset, ["flat", "gradient"], tiny_train_cfg, 4)
        assert len(batch) == 4
        assert batch.domains.tolist() == [0, 0, 1, 1]
        assert ids == again_ids
        np.testing.assert_array_equal(batch.images, again.images)
        assert batch.images.min() >= 0.0 and batch.images.max() <= 1.0

    def test_only_training_split_is_sampled(self, tiny_dataset, tiny_train_cfg):
        flat = tiny_dataset.domain("flat")
        train_ids = {flat.ids[i] for i in flat.train_idx}
        for iteration in range(10):
            _, ids = make_batch(tiny_dataset, ["flat", "gradient"], tiny_train_cfg, iteration)
            assert all(i in train_ids for i in ids if i.startswith("flat/"))

    def test_producer_matches_synchronous(self):
        def build(iteration):
            return iteration * iteration

        threaded = list(BatchProducer(build, 6, prefetch=2))
        inline = list(BatchProducer(build, 6, prefetch=0))
        assert threaded == inline == [(i, i * i) for i in range(6)]

    def test_producer_surfaces_errors(self):
        def build(iteration):
            if iteration == 2:
                raise DataError("broken batch")
            return iteration

        with pytest.raises(DataError, match="broken batch"):
            list(BatchProducer(build, 5, prefetch=1))


class TestTimeDomainNoise:
    def test_none_target_is_identity(self, rng):
        image = rng.uniform(size=(3, 8, 8))
        out = time_domain_noise(image, NoiseConfig(target="none"), rng)
        np.testing.assert_array_equal(out, image)

    def test_range(self, rng):
        cfg = NoiseConfig(apply_probability=1.0, snr_db=None, add_sigma=0.3).validate()
        out = time_domain_noise(rng.uniform(size=(3, 8, 8)), cfg, rng)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestEvaluate:
    def test_confusion_matrix(self):
        matrix = confusion_matrix([0, 1, 1, 2], [0, 1, 2, 2], 3)
        assert matrix.tolist() == [[1, 0, 0], [0, 1, 0], [0, 1, 1]]

    def test_accuracy_is_trace_share(self, small_model_cfg, tiny_dataset):
        model = FfdiModel(small_model_cfg)
        data = tiny_dataset.domain("flat")
        accuracy, matrix = evaluate(model, data.images, data.labels, with_confusion=True)
        assert matrix.sum() == len(data.labels)
        assert accuracy == pytest.approx(np.trace(matrix) / len(data.labels))

    def test_empty_set(self, small_model_cfg):
        with pytest.raises(DataError):
            evaluate(FfdiModel(small_model_cfg), np.zeros((0, 3, 32, 32)), [])


class TestTrainLodo:
    def test_report_fields(self, trained, tiny_dataset):
        cfg, (_model, report) = trained
        assert report.held_out == "sketch"
        assert len(report.losses) == 3
        assert report.consumed_domains == ["flat", "gradient"]
        assert set(report.source_accuracy) == {"flat", "gradient"}
        assert 0.0 <= report.held_out_accuracy <= 1.0
        assert np.asarray(report.held_out_confusion).sum() == len(tiny_dataset.domain("sketch").labels)
        assert report.config["held_out"] == "sketch"

    def test_learning_rate_schedule(self, trained):
        cfg, (_model, report) = trained
        rates = [row["lr_other"] for row in report.losses]
        assert rates[:2] == [cfg.lr_other, cfg.lr_other]
        assert rates[2] == pytest.approx(cfg.lr_other * cfg.lr_gamma)

    def test_losses_are_finite(self, trained):
        _cfg, (_model, report) = trained
        for row in report.losses:
            assert all(np.isfinite(row[key]) for key in ("L_all", "L_ci", "L_caH", "L_caeL"))

    def test_logged_terms_recombine(self, trained):
        cfg, (_model, report) = trained
        for row in report.losses:
            assert abs(row["L_all"] - recombine_total(row, cfg.model.lam)) <= 1e-6

    def test_reproducible(self, trained, tiny_dataset):
        cfg, (model, report) = trained
        again_model, again = train_lodo(tiny_dataset, "sketch", replace(cfg, prefetch=0))
        assert again.losses == report.losses
        assert again.consumed_sample_hash == report.consumed_sample_hash
        for name, param in model.named_parameters():
            np.testing.assert_array_equal(again_model.p(name).data, param.data)

    def test_zero_iterations_still_evaluates(self, tiny_dataset, tiny_train_cfg):
        _model, report = train_lodo(tiny_dataset, "sketch", replace(tiny_train_cfg, iterations=0))
        assert report.losses == []
        assert report.consumed_domains == []
        assert 0.0 <= report.held_out_accuracy <= 1.0

    def test_report_dict_round_trip(self, trained):
        _cfg, (_model, report) = trained
        assert RunReport.from_dict(report.to_dict()) == report

    def test_image_size_mismatch(self, tiny_dataset, tiny_train_cfg, tiny_model_cfg):
        with pytest.raises(ConfigurationError, match="image_size"):
            train_lodo(tiny_dataset, "sketch", replace(tiny_train_cfg, model=tiny_model_cfg))


class TestDatasetFor:
    def test_renders_when_no_directory(self, tiny_train_cfg):
        dataset = dataset_for(replace(tiny_train_cfg, domains=("flat", "sketch")))
        assert dataset.domain_names == ["flat", "sketch"]
        assert dataset.num_classes == 3

    def test_loads_directory(self, tiny_dataset, tiny_train_cfg, tmp_path):
        write_dataset_dir(tiny_dataset, str(tmp_path))
        dataset = dataset_for(replace(tiny_train_cfg, data_dir=str(tmp_path)))
        assert dataset.domain_names == tiny_dataset.domain_names


def _learning_cfg(small_model_cfg, tmp_path, **model_changes):
    return TrainConfig(
        model=replace(small_model_cfg, **model_changes),
        iterations=150,
        batch_per_domain=6,
        milestones=(),
        augment_mode="none",
        held_out="sketch",
        domains=("flat", "gradient", "sketch"),
        per_class_per_domain=5,
        out_dir=str(tmp_path / "learn"),
        log_every=50,
        prefetch=0,
    ).validate()


class TestLearning:
    @pytest.mark.parametrize(
        "changes",
        [
            {"use_high": False, "use_low": False, "use_interaction": False},
            {},
        ],
        ids=["deepall", "ffdi"],
    )
    def test_classification_loss_falls(self, tiny_dataset, small_model_cfg, tmp_path, changes):
        cfg = _learning_cfg(small_model_cfg, tmp_path, **changes)
        _model, report = train_lodo(tiny_dataset, "sketch", cfg)
        l_ci = [row["L_ci"] for row in report.losses]
        first, last = np.mean(l_ci[:10]), np.mean(l_ci[-20:])
        assert last < first - 0.1
        assert last < 0.85 * np.log(3)

    def test_deepall_fits_its_sources(self, tiny_dataset, small_model_cfg, tmp_path):
        cfg = _learning_cfg(small_model_cfg, tmp_path, use_high=False, use_low=False, use_interaction=False)
        _model, report = train_lodo(tiny_dataset, "sketch", cfg)
        assert np.mean([row["L_ci"] for row in report.losses[-20:]]) < 0.7 * np.log(3)

    @pytest.mark.slow
    def test_held_out_accuracy_beats_chance(self, small_model_cfg, tmp_path):
        dataset = build_dataset(domains=["flat", "gradient", "texture", "sketch"], classes=3, per_class_per_domain=30)
        cfg = replace(
            _learning_cfg(small_model_cfg, tmp_path),
            iterations=400,
            augment_mode="fdag",
            domains=("flat", "gradient", "texture", "sketch"),
        ).validate()
        _model, report = train_lodo(dataset, "sketch", cfg)
        assert report.held_out_accuracy > 1.0 / 3.0 + 0.1
