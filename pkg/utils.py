import os
import json
import math
import hashlib
import logging
from typing import Any, Dict, Optional

TOOL_NAME = "hstable-lab"
TOOL_VERSION = "0.3.0"

def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """Set up logging configuration."""
    log_file = log_file or get_env_variable("HSTABLE_LOG_FILE", "hstable_lab.log")
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )

def get_env_variable(var_name: str, default_value: Any = None) -> Any:
    """Get environment variable with fallback."""
    return os.getenv(var_name, default_value)

def get_env_int(var_name: str, default_value: int) -> int:
    """Get an integer environment variable, ignoring malformed values."""
    raw = get_env_variable(var_name)
    if raw is None:
        return default_value
    try:
        return int(raw)
    except ValueError:
        logging.getLogger(__name__).warning(f"Ignoring non-integer {var_name}={raw!r}")
        return default_value

def get_env_float(var_name: str, default_value: float) -> float:
    """Get a float environment variable, ignoring malformed values."""
    raw = get_env_variable(var_name)
    if raw is None:
        return default_value
    try:
        return float(raw)
    except ValueError:
        logging.getLogger(__name__).warning(f"Ignoring non-numeric {var_name}={raw!r}")
        return default_value

def format_float(value: float, digits: int = 12) -> str:
    """Format a float with a fixed number of significant digits."""
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}g}"

def canonical_json(payload: Any) -> str:
    """Serialize a payload with sorted keys so equal payloads give equal bytes."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)

def _json_default(obj: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(obj, "item") and getattr(obj, "shape", None) == ():
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")

def stable_hash(payload: Dict[str, Any]) -> str:
    """Stable hex digest of a JSON-able dictionary."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:32]

def get_tool_info() -> Dict[str, str]:
    """Get information about the tool producing the outputs."""
    return {
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
    }
