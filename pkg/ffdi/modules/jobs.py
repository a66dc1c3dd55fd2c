"""
FFDI - Jobs Module
Registry-tracked training runs: queued -> running -> completed / failed,
with a stage timeline. Used synchronously by the CLI and on a daemon
thread by the HTTP API.
"""

import json
import threading

from . import database
from .config import config_hash, to_flat_dict
from .logger import get_logger
from .reporting import write_run_outputs
from .training import dataset_for, train_lodo

logger = get_logger(__name__)


def create_training_job(cfg):
    job_id = database.create_job("train", config=to_flat_dict(cfg), config_hash=config_hash(cfg), out_dir=cfg.out_dir)
    database.append_run_event(job_id, "queued", "Queued", {"held_out": cfg.held_out, "seed": cfg.seed})
    return job_id


def run_training_job(job_id, cfg, dataset=None):
    """Train, write outputs and record the result. Re-raises after marking the job failed."""
    database.update_job(job_id, status="running", stage_label="Preparing data", progress=5)
    database.append_run_event(job_id, "running", "Preparing data")
    try:
        if dataset is None:
            dataset = dataset_for(cfg)
        database.update_job(job_id, status="training", stage_label="Training", progress=10)
        database.append_run_event(job_id, "training", "Training", {"iterations": cfg.iterations})

        def _progress(iteration, total, values):
            percent = 10 + int(80 * (iteration + 1) / max(1, total))
            database.update_job(job_id, progress=min(percent, 90), stage_label=f"Training ({iteration + 1}/{total})")

        model, report = train_lodo(dataset, cfg.held_out, cfg, progress=_progress)
        write_run_outputs(cfg.out_dir, report, cfg, model)
        database.record_metrics(job_id, report)
        database.update_job(
            job_id,
            status="completed",
            stage_label="Completed",
            progress=100,
            result_json=json.dumps(report.to_dict()),
        )
        database.append_run_event(
            job_id, "completed", "Completed", {"held_out_accuracy": report.held_out_accuracy}
        )
        return model, report
    except Exception as e:
        logger.exception("Training job %s failed", job_id)
        database.update_job(job_id, status="failed", stage_label="Failed", progress=100, error=str(e))
        database.append_run_event(job_id, "failed", "Failed", {"error": str(e)})
        raise


def start_training_job(cfg, dataset=None):
    """Queue a run and train it on a daemon thread; returns the job id immediately."""
    job_id = create_training_job(cfg)

    def _worker():
        try:
            run_training_job(job_id, cfg, dataset)
        except Exception:
            pass  # recorded on the job

    thread = threading.Thread(target=_worker, daemon=True)
    thread.start()
    return job_id
