"""
Prometheus counters for pipeline runs, exported to a textfile by the CLI
"""
from functools import wraps

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

registry = CollectorRegistry()

stage_duration = Histogram(
    "gsprop_stage_duration_seconds",
    "Wall time spent per pipeline stage",
    ["stage"],
    registry=registry,
)

lmm_queries_total = Counter(
    "gsprop_lmm_queries_total",
    "Material queries issued to the LMM provider",
    ["outcome"],
    registry=registry,
)

gaussians_total = Gauge(
    "gsprop_gaussians_total",
    "Gaussians per provenance after lifting",
    ["provenance"],
    registry=registry,
)


def observe_stage(stage: str, seconds: float) -> None:
    stage_duration.labels(stage=stage).observe(seconds)


def count_query(outcome: str) -> None:
    lmm_queries_total.labels(outcome=outcome).inc()


def record_provenance(counts: dict) -> None:
    for provenance, count in counts.items():
        gaussians_total.labels(provenance=provenance).set(count)


def track_outcome(func):
    """Decorator counting LMM query outcomes by annotation status"""
    @wraps(func)
    async def wrapper(*args, **kwargs):
        try:
            result = await func(*args, **kwargs)
        except Exception:
            count_query("error")
            raise
        count_query("unresolved" if getattr(result, "unresolved", False) else "resolved")
        return result
    return wrapper


def write_metrics(path: str) -> None:
    write_to_textfile(path, registry)
