# run_routes.py
"""
FFDI - Run Routes
Flask blueprint over the run registry: queue a training run, list runs,
poll status and export a finished run's PDF report.
Returns JSON only, except the PDF export.
"""

import json
import os
import uuid
from io import BytesIO

from flask import Blueprint, g, jsonify, request, send_file

from ffdi.modules import database
from ffdi.modules.config import load_train_config
from ffdi.modules.errors import ConfigurationError, FfdiError
from ffdi.modules.jobs import start_training_job
from ffdi.modules.logger import get_logger
from ffdi.modules.reporting import render_report_pdf

run_bp = Blueprint("run_bp", __name__)
logger = get_logger(__name__)


def _error(message, code, status):
    return (
        jsonify(
            {
                "success": False,
                "error": {
                    "code": code,
                    "message": message,
                    "request_id": g.get("request_id"),
                },
            }
        ),
        status,
    )


def _overrides_from(data):
    """Accept {"config": {...}} or top-level keys; values may be scalars or lists."""
    raw = data.get("config", data) if isinstance(data, dict) else {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be an object of key/value pairs")
    pairs = []
    for key, value in raw.items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "none"
        pairs.append((key, str(value)))
    return pairs


def _runs_root():
    return os.environ.get("FFDI_RUNS_DIR", "runs")


@run_bp.route("/api/runs", methods=["POST"])
def create_run():
    """
    Queue a leave-one-domain-out training run.
    Returns job_id immediately; poll /api/runs/<job_id>.
    """
    data = request.get_json(silent=True) or {}
    try:
        pairs = _overrides_from(data)
        if not any(key == "out_dir" for key, _ in pairs):
            pairs.append(("out_dir", os.path.join(_runs_root(), uuid.uuid4().hex[:12])))
        cfg = load_train_config(overrides=pairs)
    except ConfigurationError as e:
        return _error(e.message, e.code, 400)

    job_id = start_training_job(cfg)
    logger.info("Queued run %s (held_out=%s, out_dir=%s)", job_id, cfg.held_out, cfg.out_dir)
    return jsonify(
        {
            "success": True,
            "job_id": job_id,
            "status": "queued",
            "out_dir": cfg.out_dir,
        }
    ), 202


@run_bp.route("/api/runs", methods=["GET"])
def list_runs():
    try:
        limit = max(1, min(500, int(request.args.get("limit", 50))))
    except ValueError:
        return _error("limit must be an integer", "validation_error", 400)
    return jsonify({"success": True, "runs": database.list_jobs(limit)})


@run_bp.route("/api/runs/<job_id>", methods=["GET"])
def run_status(job_id):
    job = database.get_job(job_id)
    if not job:
        return _error("Run not found", "not_found", 404)

    response = {
        "success": True,
        "job_id": job_id,
        "kind": job.get("kind"),
        "status": job.get("status"),
        "stage_label": job.get("stage_label"),
        "progress": job.get("progress"),
        "config_hash": job.get("config_hash"),
        "out_dir": job.get("out_dir"),
        "error": job.get("error"),
        "events": database.get_run_events(job_id),
    }

    if job.get("status") == "completed":
        result_json = job.get("result_json")
        try:
            response["result"] = json.loads(result_json) if result_json else None
        except ValueError:
            response["result"] = None
        response["metrics"] = database.get_metrics(job_id)

    return jsonify(response)


@run_bp.route("/api/runs/<job_id>/report.pdf", methods=["GET"])
def export_run_pdf(job_id):
    job = database.get_job(job_id)
    if not job:
        return _error("Run not found", "not_found", 404)
    if job.get("status") != "completed" or not job.get("result_json"):
        return _error("Run has not completed yet", "not_ready", 409)

    try:
        report = json.loads(job["result_json"])
        payload = render_report_pdf(report, run_id=job_id)
    except ValueError:
        return _error("Stored run report is corrupt", "internal_error", 500)
    except FfdiError as e:
        return _error(e.message, e.code, 500)

    return send_file(
        BytesIO(payload),
        mimetype="application/pdf",
        as_attachment=True,
        download_name=f"ffdi-run-{job_id[:12]}.pdf",
    )
