import os
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor

logger = logging.getLogger(__name__)


def get_resource_path(relative_path):
    """Absolute path to a resource shipped inside the package."""
    base_path = os.path.abspath(os.path.dirname(__file__))
    resource_path = os.path.join(base_path, relative_path)
    logger.debug(f"Resolved resource path for '{relative_path}': {resource_path}")
    return resource_path


def stable_seed(*parts):
    """Derive a 32-bit seed from arbitrary parts. Stable across processes (no hash())."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def text_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parallel_map(fn, items, workers=1):
    """
    Map fn over items, preserving input order.

    With workers > 1 the calls run in a ProcessPoolExecutor, so fn and the items
    must be picklable. Results never depend on the worker count.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    n_workers = min(workers, len(items))
    logger.debug(f"Dispatching {len(items)} tasks to {n_workers} worker processes")
    with ProcessPoolExecutor(max_workers=n_workers) as executor:
        return list(executor.map(fn, items))
