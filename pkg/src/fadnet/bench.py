"""Forward-pass timing harness for network configurations."""

from __future__ import annotations

import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .metrics import format_table
from .network import NetworkConfig, build_fadnet, count_parameters, forward_fadnet
from .tensor import Tensor, no_grad

MIN_RUNS = 10


@dataclass
class BenchReport:
    name: str
    resolution: tuple
    warmup: int
    runs: int
    times: list = field(default_factory=list)  # seconds per timed run, warmups excluded
    parameters: int = 0

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.times, 95))

    def row(self) -> dict:
        h, w = self.resolution
        return {"config": self.name, "resolution": f"{h}x{w}", "params": self.parameters,
                "warmup": self.warmup, "runs": self.runs,
                "median_s": self.median, "p95_s": self.p95}


REPORT_COLUMNS = ["config", "resolution", "params", "warmup", "runs", "median_s", "p95_s"]


def _thread_limit(threads):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(threads))


def run_bench(cfg: NetworkConfig, resolution=(64, 64), runs: int = MIN_RUNS, warmup: int = 3,
              batch: int = 1, seed: int = 0, threads: int | None = None, name: str | None = None,
              clock=time.perf_counter) -> BenchReport:
    """Time ``runs`` gradient-free forward passes of netC+netS on a fixed random pair."""
    if runs < MIN_RUNS:
        raise ConfigError(f"at least {MIN_RUNS} timed runs are required, got {runs}")
    if warmup < 0:
        raise ConfigError("warmup must be non-negative")
    h, w = resolution
    if h % cfg.divisor or w % cfg.divisor:
        raise ConfigError(f"resolution {h}x{w} must be divisible by {cfg.divisor}")
    net_c, net_s = build_fadnet(cfg, seed)
    rng = np.random.default_rng(seed)
    left = Tensor(rng.random((batch, 3, h, w)))
    right = Tensor(rng.random((batch, 3, h, w)))
    report = BenchReport(name or cfg.name or f"e{cfg.e_ratio}d{cfg.d_ratio}", (h, w), warmup, runs,
                         parameters=count_parameters(cfg)[0])
    with _thread_limit(threads), no_grad():
        for i in range(warmup + runs):
            start = clock()
            forward_fadnet(left, right, net_c, net_s)
            elapsed = clock() - start
            if i >= warmup:
                report.times.append(elapsed)
    return report


def bench_table(reports) -> str:
    return format_table([r.row() for r in reports], REPORT_COLUMNS)


def bench_tsv(reports) -> str:
    """Machine-readable dump: one line per timed run."""
    lines = ["config\theight\twidth\tparams\trun\tseconds"]
    for r in reports:
        h, w = r.resolution
        lines += [f"{r.name}\t{h}\t{w}\t{r.parameters}\t{i}\t{t!r}" for i, t in enumerate(r.times)]
    return "\n".join(lines) + "\n"
