from datetime import datetime
from typing import Any, Dict, Optional
import logging
import traceback
import uuid

import orjson
from pydantic import ValidationError

from .exceptions import (
    AssumptionViolationException,
    ConfigurationException,
    HardNetException
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_DOMAIN_ERROR = 2
EXIT_CONFIGURATION_ERROR = 3

def create_error_report(
    exc: Exception,
    run_id: Optional[str] = None
) -> Dict[str, Any]:
    """Create standardized error report"""

    run_id = run_id or str(uuid.uuid4())

    if isinstance(exc, HardNetException):
        error_detail = exc.detail
        error_code = exc.error_code or "HARDNET_ERROR"
        error_type = exc.error_type or "hardnet"
        context = exc.context
    elif isinstance(exc, ValidationError):
        validation_errors = []
        for error in exc.errors():
            validation_errors.append({
                "field": " -> ".join(str(loc) for loc in error["loc"]),
                "message": error["msg"],
                "type": error["type"],
                "input": error.get("input")
            })
        error_detail = "Validation failed"
        error_code = "VALIDATION_ERROR"
        error_type = "validation"
        context = {"validation_errors": validation_errors}
    else:
        # Don't expose internal error details
        error_detail = "An unexpected error occurred"
        error_code = "INTERNAL_ERROR"
        error_type = "internal"
        context = {"exception_type": type(exc).__name__}

    error_report = {
        "error": {
            "message": error_detail,
            "error_code": error_code,
            "error_type": error_type,
            "context": context or {},
            "timestamp": datetime.utcnow().isoformat(),
            "run_id": run_id
        }
    }

    # Log error for monitoring
    logger.error(
        f"Run error: {error_code} - {error_detail}",
        extra={
            "run_id": run_id,
            "error_code": error_code,
            "error_type": error_type,
            "context": context
        }
    )

    return error_report

def dump_error_report(report: Dict[str, Any]) -> str:
    """Serialize an error report; numpy payloads become lists"""
    return orjson.dumps(report, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS, default=str).decode()

def handle_cli_exception(exc: Exception, run_id: Optional[str] = None) -> int:
    """Report an exception raised by a CLI command and return the process exit code"""

    if isinstance(exc, (ConfigurationException, ValidationError)):
        exit_code = EXIT_CONFIGURATION_ERROR
    elif isinstance(exc, HardNetException):
        exit_code = EXIT_DOMAIN_ERROR
    else:
        # Log the full exception with traceback
        logger.error(
            f"Unexpected error: {type(exc).__name__}: {str(exc)}",
            exc_info=exc,
            extra={
                "exception_type": type(exc).__name__,
                "traceback": "".join(traceback.format_exception(type(exc), exc, exc.__traceback__))
            }
        )
        exit_code = EXIT_UNEXPECTED

    report = create_error_report(exc, run_id=run_id)
    if isinstance(exc, AssumptionViolationException):
        report["error"]["hint"] = "Run `hardnet check --task <task>` for the full assumption report"
    print(dump_error_report(report))
    return exit_code
