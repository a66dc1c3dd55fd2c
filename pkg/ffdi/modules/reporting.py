"""
FFDI - Reporting Module
Run outputs (report.json, losses.csv, accuracy.csv, config.cfg, checkpoint.bin),
experiment tables, feature exports and the PDF run report.
All files are written atomically; floats carry six significant digits.
"""

import json
import os
from io import BytesIO

import numpy as np

from .checkpoint import save_checkpoint
from .config import to_config_text
from .errors import DataError, FfdiError
from .logger import get_logger
from .model import LOSS_KEYS
from .utils import atomic_write_bytes, atomic_write_text, csv_text, format_float

try:
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.units import mm
    from reportlab.pdfgen import canvas
except Exception:  # pragma: no cover - optional at runtime
    canvas = None
    A4 = None
    mm = None
    colors = None

logger = get_logger(__name__)

REPORT_FILE = "report.json"
LOSSES_FILE = "losses.csv"
ACCURACY_FILE = "accuracy.csv"
CHECKPOINT_FILE = "checkpoint.bin"
CONFIG_FILE = "config.cfg"


def _round_floats(value):
    if isinstance(value, (float, np.floating)):
        return float(format_float(value))
    if isinstance(value, dict):
        return {k: _round_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json(path, payload):
    atomic_write_text(path, json.dumps(_round_floats(payload), indent=2, sort_keys=True) + "\n")
    return path


def losses_rows(report):
    header = ["iteration"] + list(LOSS_KEYS) + ["lr_classifier", "lr_other"]
    rows = [[row["iteration"]] + [row[k] for k in header[1:]] for row in report.losses]
    return header, rows


def accuracy_rows(report):
    rows = [[report.held_out, "held_out", report.held_out_accuracy]]
    rows += [[name, "source_test", acc] for name, acc in report.source_accuracy.items()]
    return ["domain", "role", "accuracy"], rows


def write_run_outputs(out_dir, report, cfg, model=None):
    write_json(os.path.join(out_dir, REPORT_FILE), report.to_dict())
    atomic_write_text(os.path.join(out_dir, LOSSES_FILE), csv_text(*losses_rows(report)))
    atomic_write_text(os.path.join(out_dir, ACCURACY_FILE), csv_text(*accuracy_rows(report)))
    atomic_write_text(os.path.join(out_dir, CONFIG_FILE), to_config_text(cfg))
    if model is not None:
        save_checkpoint(model, os.path.join(out_dir, CHECKPOINT_FILE))
    logger.info("Wrote run outputs to %s", out_dir)
    return out_dir


def read_report(run_dir):
    path = os.path.join(run_dir, REPORT_FILE)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    except ValueError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}")


def write_table(path, table):
    rows = [[row.get(col) for col in table.columns] for row in table.rows]
    atomic_write_text(path, csv_text(table.columns, rows))
    return path


def write_features(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))
    return path


def read_feature_csv(path):
    """Feature matrix from an export (columns after domain,label) or a plain numeric CSV."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = [line.strip() for line in handle if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read features {path}: {exc}")
    if not lines:
        raise DataError(f"{path} is empty")
    header = lines[0].split(",")
    skip = 2 if header[:2] == ["domain", "label"] else 0
    start = 1 if skip or not _is_numeric_row(header) else 0
    vectors = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = line.split(",")[skip:]
        try:
            vectors.append([float(c) for c in cells])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature value")
    if not vectors or len({len(v) for v in vectors}) != 1:
        raise DataError(f"{path}: feature rows are missing or ragged")
    return np.asarray(vectors, dtype=np.float64)


def _is_numeric_row(cells):
    try:
        [float(c) for c in cells]
        return True
    except ValueError:
        return False


def render_report_pdf(report, run_id=None):
    """
    Styled PDF summary of one run: header, config echo, accuracy bars and
    loss trajectory. `report` is a RunReport dict as stored in report.json.
    """
    if canvas is None:
        raise FfdiError("PDF export dependency missing. Install reportlab.", code="dependency_missing")

    buffer = BytesIO()
    pdf = canvas.Canvas(buffer, pagesize=A4)
    width, height = A4
    left = 16 * mm
    right = 16 * mm
    top_margin = 18 * mm
    bottom_margin = 18 * mm
    content_width = width - left - right
    y = height - top_margin
    page_no = 1
    label = run_id or report.get("config_hash", "")

    def _text(value, default=""):
        return str(value if value is not None else default).strip()

    def _draw_footer():
        pdf.setStrokeColor(colors.HexColor("#E2E8F0"))
        pdf.setLineWidth(0.6)
        pdf.line(left, 11 * mm, width - right, 11 * mm)
        pdf.setFillColor(colors.HexColor("#475569"))
        pdf.setFont("Helvetica", 8)
        pdf.drawString(left, 7.5 * mm, f"Run: {label}")
        pdf.drawRightString(width - right, 7.5 * mm, f"Page {page_no}")

    def _new_page():
        nonlocal y, page_no
        _draw_footer()
        pdf.showPage()
        page_no += 1
        y = height - top_margin

    def _ensure_space(required_mm):
        if y - (required_mm * mm) < bottom_margin:
            _new_page()

    def _line(text, font="Helvetica", size=9.5, color_hex="#1F2937"):
        nonlocal y
        _ensure_space(7)
        pdf.setFillColor(colors.HexColor(color_hex))
        pdf.setFont(font, size)
        pdf.drawString(left, y, _text(text))
        y -= 5.4 * mm

    def _section_title(title, keep_with_next_mm=14):
        nonlocal y
        y -= 2 * mm
        _ensure_space(10 + keep_with_next_mm)
        pdf.setFillColor(colors.HexColor("#F8FAFC"))
        pdf.setStrokeColor(colors.HexColor("#E2E8F0"))
        pdf.roundRect(left, y + 2.2 * mm - 8.6 * mm, content_width, 8.6 * mm, 4, stroke=1, fill=1)
        pdf.setFillColor(colors.HexColor("#1E40AF"))
        pdf.setFont("Helvetica-Bold", 11.3)
        pdf.drawString(left + 3.2 * mm, y - 1.7 * mm, _text(title))
        y -= 9.2 * mm

    def _accuracy_bar(name, value, hex_color):
        nonlocal y
        _ensure_space(13.5)
        value = max(0.0, min(1.0, float(value or 0.0)))
        pdf.setFillColor(colors.HexColor("#1F2937"))
        pdf.setFont("Helvetica-Bold", 9.2)
        pdf.drawString(left, y, _text(name))
        bar_x = left + 45 * mm
        bar_w = 86 * mm
        bar_h = 4.6 * mm
        pdf.setFillColor(colors.HexColor("#E2E8F0"))
        pdf.roundRect(bar_x, y - 3 * mm, bar_w, bar_h, 1.6, stroke=0, fill=1)
        pdf.setFillColor(colors.HexColor(hex_color))
        pdf.roundRect(bar_x, y - 3 * mm, bar_w * value, bar_h, 1.6, stroke=0, fill=1)
        pdf.setFillColor(colors.HexColor("#0F172A"))
        pdf.drawRightString(width - right, y, f"{value * 100:.1f}%")
        y -= 7.8 * mm

    pdf.setFillColor(colors.HexColor("#1D4ED8"))
    pdf.roundRect(left, y - 18 * mm, content_width, 16 * mm, 5, stroke=0, fill=1)
    pdf.setFillColor(colors.white)
    pdf.setFont("Helvetica-Bold", 16)
    pdf.drawString(left + 4 * mm, y - 7 * mm, "FFDI Run Report")
    pdf.setFont("Helvetica", 10)
    pdf.drawString(left + 4 * mm, y - 12 * mm, "Leave-one-domain-out training summary")
    y -= 22 * mm

    _line(f"Held-out domain: {_text(report.get('held_out'))}", font="Helvetica-Bold", size=10.5, color_hex="#0F172A")
    _line(f"Seed: {_text(report.get('seed'))}    Iterations: {_text(report.get('iterations'))}")
    _line(f"Config hash: {_text(report.get('config_hash'))}", color_hex="#475569")
    _line(f"Wall clock: {float(report.get('wall_clock_s') or 0.0):.1f} s", color_hex="#475569")

    _section_title("Accuracy", keep_with_next_mm=16)
    _accuracy_bar(f"{report.get('held_out')} (held out)", report.get("held_out_accuracy"), "#DC2626")
    for name, value in sorted((report.get("source_accuracy") or {}).items()):
        _accuracy_bar(f"{name} (source test)", value, "#2563EB")

    losses = report.get("losses") or []
    _section_title("Loss Trajectory", keep_with_next_mm=20)
    if losses:
        marks = sorted({0, len(losses) // 4, len(losses) // 2, (3 * len(losses)) // 4, len(losses) - 1})
        for index in marks:
            row = losses[index]
            _line(
                f"it {row['iteration']}: L_all {format_float(row['L_all'])}  L_ci {format_float(row['L_ci'])}  "
                f"L_caH {format_float(row['L_caH'])}  L_caL {format_float(row['L_caL'])}  "
                f"L_caeH {format_float(row['L_caeH'])}  L_caeL {format_float(row['L_caeL'])}",
                size=8.6,
            )
    else:
        _line("No training iterations were run.", color_hex="#475569")

    _section_title("Configuration", keep_with_next_mm=14)
    for key, value in sorted((report.get("config") or {}).items()):
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        _line(f"{key} = {value}", size=8.4, color_hex="#334155")

    _draw_footer()
    pdf.save()
    return buffer.getvalue()


def write_report_pdf(path, report, run_id=None):
    atomic_write_bytes(path, render_report_pdf(report, run_id=run_id))
    return path
