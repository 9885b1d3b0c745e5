import os
import glob
import logging
import tempfile
from typing import Any, Dict, Optional

from utils import get_env_variable, stable_hash

logger = logging.getLogger(__name__)

DEFAULT_CACHE_DIR = ".hstable_cache"

class ResultCache:
    def __init__(self, cache_dir: Optional[str] = None, enabled: bool = True):
        """Initialize result cache with a directory of <hash>.json entries."""
        self.cache_dir = cache_dir or get_env_variable("HSTABLE_CACHE_DIR", DEFAULT_CACHE_DIR)
        self.enabled = enabled
        if self.enabled:
            self.init_cache()

    def init_cache(self):
        """Create the cache directory if needed; disable caching when that fails."""
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
        except OSError as e:
            logger.error(f"Error creating cache directory {self.cache_dir}: {e}")
            self.enabled = False

    @staticmethod
    def make_key(operation: str, params: Dict[str, Any], tolerances: Dict[str, Any], convention: str) -> str:
        """Stable key from (operation, parameters, tolerances, convention tag)."""
        return stable_hash({
            "operation": operation,
            "params": params,
            "tolerances": tolerances,
            "convention": convention,
        })

    def _path(self, key: str) -> str:
        return os.path.join(self.cache_dir, f"{key}.json")

    def fetch(self, key: str) -> Optional[str]:
        """Return the cached payload text for key, or None on a miss."""
        if not self.enabled:
            return None
        try:
            with open(self._path(key), "r", encoding="utf-8") as handle:
                payload = handle.read()
            logger.debug(f"cache hit {key}")
            return payload
        except FileNotFoundError:
            logger.debug(f"cache miss {key}")
            return None
        except OSError as e:
            logger.error(f"Error reading cache entry {key}: {e}")
            return None

    def store(self, key: str, payload: str) -> bool:
        """Store payload text atomically under key."""
        if not self.enabled:
            return False
        tmp_path = None
        try:
            fd, tmp_path = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(payload)
            os.replace(tmp_path, self._path(key))
            return True
        except OSError as e:
            logger.error(f"Error storing cache entry {key}: {e}")
            if tmp_path is not None and os.path.exists(tmp_path):
                try:
                    os.remove(tmp_path)
                except OSError:
                    pass
            return False

    def get_entry_count(self) -> int:
        """Get the number of cached entries."""
        if not self.enabled:
            return 0
        return len(glob.glob(os.path.join(self.cache_dir, "*.json")))

    def clear(self) -> bool:
        """Remove every cached entry."""
        if not self.enabled:
            return False
        try:
            for path in glob.glob(os.path.join(self.cache_dir, "*.json")):
                os.remove(path)
            return True
        except OSError as e:
            logger.error(f"Error clearing cache: {e}")
            return False
