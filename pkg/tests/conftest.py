import numpy as np
import pytest

from vattn import KVCache, QueryBatch

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def _record(label: str, passed: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {label}  {detail}".rstrip())
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_cache(seed, n=32, d=8, m=4, logit_scale=1.0):
    rng = np.random.default_rng(seed)
    keys = rng.standard_normal((n, d)) * logit_scale
    values = rng.standard_normal((n, d))
    queries = rng.standard_normal((m, d))
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    return KVCache(f32(keys), f32(values)), QueryBatch(f32(queries))


def cache_from_logits(logits, values):
    """d=1 keys that reproduce ``logits`` for the query [1.0] (raw scale)."""
    logits = np.asarray(logits, float)
    values = np.asarray(values, float)
    if values.ndim == 1:
        values = values[:, None]
    keys = logits[:, None]
    if values.shape[1] > 1:
        keys = np.hstack([keys, np.zeros((len(logits), values.shape[1] - 1))])
    return KVCache(keys, values)
