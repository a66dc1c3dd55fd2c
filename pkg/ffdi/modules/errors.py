"""
FFDI - Error Module
Exception hierarchy shared by every module. Each error carries a stable
code used in CLI messages and HTTP error envelopes.
"""


class FfdiError(Exception):
    code = "ffdi_error"

    def __init__(self, message, code=None):
        super().__init__(message)
        self.message = message
        if code:
            self.code = code

    def to_envelope(self, request_id=None):
        return {
            "success": False,
            "error": {
                "code": self.code,
                "message": self.message,
                "request_id": request_id,
            },
        }


class ConfigurationError(FfdiError):
    code = "configuration_error"


class ShapeError(ConfigurationError):
    code = "shape_error"


class GraphError(FfdiError):
    code = "graph_error"


class DataError(FfdiError):
    code = "data_error"


class UsageError(FfdiError):
    code = "usage_error"
