import os
import uuid

from dotenv import load_dotenv
from flask import Flask, g, jsonify, request

from ffdi.modules.database import db_path, init_db
from ffdi.modules.errors import FfdiError
from ffdi.modules.logger import configure_logging
from ffdi.routes.run_routes import run_bp

load_dotenv()

app = Flask(__name__)

# Logging configuration
configure_logging()

# Register blueprints
app.register_blueprint(run_bp)


# Request ID middleware
@app.before_request
def set_request_id():
    # Preserve client-provided IDs for tracing across client and server logs.
    rid = request.headers.get("X-Request-Id")
    g.request_id = rid or str(uuid.uuid4())


@app.after_request
def add_request_id_header(response):
    if hasattr(g, "request_id"):
        response.headers["X-Request-Id"] = g.request_id
    return response


def _envelope(code, message, status):
    return jsonify({
        "success": False,
        "error": {
            "code": code,
            "message": message,
            "request_id": getattr(g, "request_id", None)
        }
    }), status


# Error handlers
@app.errorhandler(FfdiError)
def ffdi_error(error):
    return jsonify(error.to_envelope(getattr(g, "request_id", None))), 400


@app.errorhandler(400)
def bad_request(error):
    return _envelope("bad_request", "Bad request", 400)


@app.errorhandler(404)
def not_found(error):
    return _envelope("not_found", "Endpoint not found", 404)


@app.errorhandler(405)
def method_not_allowed(error):
    return _envelope("method_not_allowed", "Method not allowed", 405)


@app.errorhandler(500)
def internal_error(error):
    app.logger.exception("Internal server error")
    return _envelope("internal_error", "Internal server error", 500)


if __name__ == "__main__":
    init_db()
    print("=" * 50)
    print("FFDI Run Service Starting...")
    print(f"Registry: {db_path()}")
    print("Endpoints:")
    print("  POST /api/runs")
    print("  GET  /api/runs")
    print("  GET  /api/runs/<job_id>")
    print("  GET  /api/runs/<job_id>/report.pdf")
    print("=" * 50)
    app.run(debug=False, port=int(os.environ.get("FFDI_PORT", 5000)), host="0.0.0.0")
