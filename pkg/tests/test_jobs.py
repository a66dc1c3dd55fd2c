import json
import sqlite3
from dataclasses import replace

import pytest

from ffdi.modules import database
from ffdi.modules.errors import DataError
from ffdi.modules.jobs import create_training_job, run_training_job


class TestRegistry:
    def test_job_lifecycle(self, registry):
        job_id = database.create_job("train", config={"r": 8}, config_hash="abc", out_dir="runs/x")
        database.update_job(job_id, status="running", progress=40, not_a_column="ignored")
        job = database.get_job(job_id)
        assert job["status"] == "running" and job["progress"] == 40
        assert json.loads(job["config_json"]) == {"r": 8}
        assert database.get_job("missing") is None

    def test_events_keep_order(self, registry):
        job_id = database.create_job("train")
        database.append_run_event(job_id, "queued", "Queued")
        database.append_run_event(job_id, "running", "Running", {"step": 1})
        events = database.get_run_events(job_id)
        assert [e["event_type"] for e in events] == ["queued", "running"]
        assert events[1]["details"] == {"step": 1}

    def test_list_is_newest_first(self, registry):
        first = database.create_job("train")
        second = database.create_job("train")
        assert [job["job_id"] for job in database.list_jobs(limit=2)] == [second, first]

    def test_old_registry_gains_columns(self, registry):
        conn = sqlite3.connect(str(registry))
        conn.execute("CREATE TABLE run_jobs (job_id TEXT PRIMARY KEY, kind TEXT NOT NULL, status TEXT NOT NULL)")
        conn.commit()
        conn.close()
        database.init_db(str(registry))
        conn = sqlite3.connect(str(registry))
        columns = {row[1] for row in conn.execute("PRAGMA table_info(run_jobs)")}
        conn.close()
        assert {"stage_label", "config_hash", "out_dir"} <= columns


class TestTrainingJobs:
    def test_completed_job(self, registry, tiny_dataset, tiny_train_cfg):
        job_id = create_training_job(tiny_train_cfg)
        _model, report = run_training_job(job_id, tiny_train_cfg, dataset=tiny_dataset)
        job = database.get_job(job_id)
        assert job["status"] == "completed" and job["progress"] == 100
        assert json.loads(job["result_json"])["held_out_accuracy"] == report.held_out_accuracy
        metrics = database.get_metrics(job_id)
        assert {m["metric_key"] for m in metrics} == {"held_out_accuracy", "source_accuracy", "wall_clock_s"}

    def test_failed_job_is_recorded(self, registry, tiny_dataset, tiny_train_cfg):
        cfg = replace(tiny_train_cfg, held_out="watercolor")
        job_id = create_training_job(cfg)
        with pytest.raises(DataError):
            run_training_job(job_id, cfg, dataset=tiny_dataset)
        job = database.get_job(job_id)
        assert job["status"] == "failed"
        assert "watercolor" in job["error"]
        assert database.get_run_events(job_id)[-1]["event_type"] == "failed"
