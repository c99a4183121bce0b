"""Latency instrumentation with Prometheus text-exposition output.

Per-node duration histograms are exposed as
``fa_node_duration_seconds{node="..."}`` plus a pipeline-total histogram
``fa_pipeline_duration_seconds``; raw observations are also retained so the
latency report can print true medians and per-node time fractions.
"""

from __future__ import annotations

import threading
from bisect import bisect_left

DEFAULT_BUCKETS = (0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0)

NODE_METRIC = "fa_node_duration_seconds"
PIPELINE_METRIC = "fa_pipeline_duration_seconds"


def _format_value(value: float) -> str:
    return repr(float(value))


class _Histogram:
    def __init__(self, buckets=DEFAULT_BUCKETS) -> None:
        self.buckets = tuple(buckets)
        self.counts = [0] * (len(self.buckets) + 1)  # final slot is +Inf
        self.total = 0.0
        self.observations: list[float] = []

    def observe(self, value: float) -> None:
        idx = bisect_left(self.buckets, value)
        self.counts[idx] += 1
        self.total += value
        self.observations.append(value)

    @property
    def count(self) -> int:
        return len(self.observations)

    def median(self) -> float:
        if not self.observations:
            return 0.0
        ordered = sorted(self.observations)
        mid = len(ordered) // 2
        if len(ordered) % 2:
            return ordered[mid]
        return (ordered[mid - 1] + ordered[mid]) / 2.0

    def cumulative(self):
        running = 0
        for bound, count in zip(self.buckets, self.counts):
            running += count
            yield str(bound), running
        yield "+Inf", running + self.counts[-1]


class MetricsCollector:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._nodes: dict[str, _Histogram] = {}
        self._pipeline = _Histogram()

    def observe_node(self, node: str, seconds: float) -> None:
        with self._lock:
            self._nodes.setdefault(node, _Histogram()).observe(seconds)

    def observe_pipeline(self, seconds: float) -> None:
        with self._lock:
            self._pipeline.observe(seconds)

    def render(self) -> str:
        """Prometheus text exposition format (0.0.4)."""
        with self._lock:
            lines = [
                f"# HELP {NODE_METRIC} Wall-clock seconds spent in each pipeline node.",
                f"# TYPE {NODE_METRIC} histogram",
            ]
            for node in sorted(self._nodes):
                hist = self._nodes[node]
                for bound, cumulative in hist.cumulative():
                    lines.append(f'{NODE_METRIC}_bucket{{node="{node}",le="{bound}"}} {cumulative}')
                lines.append(f'{NODE_METRIC}_sum{{node="{node}"}} {_format_value(hist.total)}')
                lines.append(f'{NODE_METRIC}_count{{node="{node}"}} {hist.count}')
            lines += [
                f"# HELP {PIPELINE_METRIC} Wall-clock seconds for one full pipeline run.",
                f"# TYPE {PIPELINE_METRIC} histogram",
            ]
            for bound, cumulative in self._pipeline.cumulative():
                lines.append(f'{PIPELINE_METRIC}_bucket{{le="{bound}"}} {cumulative}')
            lines.append(f"{PIPELINE_METRIC}_sum {_format_value(self._pipeline.total)}")
            lines.append(f"{PIPELINE_METRIC}_count {self._pipeline.count}")
            return "\n".join(lines) + "\n"

    def node_summary(self) -> dict[str, dict]:
        with self._lock:
            total_time = sum(h.total for h in self._nodes.values())
            summary = {}
            for node, hist in self._nodes.items():
                summary[node] = {
                    "count": hist.count,
                    "median_s": hist.median(),
                    "total_s": hist.total,
                    "fraction_pct": 100.0 * hist.total / total_time if total_time else 0.0,
                }
            return summary

    def pipeline_summary(self) -> dict:
        with self._lock:
            return {
                "count": self._pipeline.count,
                "median_s": self._pipeline.median(),
                "total_s": self._pipeline.total,
            }


def latency_report(collector: MetricsCollector, node_order: tuple[str, ...] | None = None) -> str:
    """Per-node latency breakdown table: node, median seconds, time fraction."""
    summary = collector.node_summary()
    order = [n for n in (node_order or sorted(summary))] if summary else []
    width = max([len(n) for n in order] + [13]) + 2
    lines = [f"{'Pipeline Node':<{width}} {'Median (s)':>12} {'Fraction':>10}"]
    for node in order:
        if node not in summary:
            continue
        row = summary[node]
        lines.append(f"{node:<{width}} {row['median_s']:>12.6f} {row['fraction_pct']:>9.1f}%")
    pipeline = collector.pipeline_summary()
    lines.append(f"{'Total':<{width}} {pipeline['median_s']:>12.6f} {100.0:>9.1f}%")
    return "\n".join(lines)
