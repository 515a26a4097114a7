"""Spectrum-consumption and communication-quality metrics.

Every ratio is kept as an exact rational internally and only rounded at
rendering time (4 significant digits, percentage style). Latency statistics
use nearest-rank percentiles (rank = ceil(q*n), 1-based) and population
standard deviation; both are computed from exact integer sums.

Duplex logs go through a vectorized evaluation of the same per-packet
definitions implemented in :mod:`prpwifi.da`; logs with more channels use
the per-packet functions directly. The two paths are interchangeable and
cross-checked by the test suite.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

from .da import (
    DaFlags,
    DaMode,
    DaParams,
    FailedCopyPolicy,
    policy_final_start,
    oracle_saved_attempts,
    rda_flags,
    simplex_flags,
    tdd_flags,
    tdd_latency,
)
from .trace import (
    RunLog,
    copy_latency,
    final_attempt_start,
    link_outcome,
    receive_time,
)

MISS_THRESHOLDS_NS = (10_000_000, 100_000_000)  # 10 ms and 100 ms deadlines

_MEDIAN_Q = Fraction(1, 2)
_P9999_Q = Fraction(9999, 10000)

_FAR = 1 << 62  # orders lost copies last in minima
_TW_EXCLUDED = -(1 << 62)  # forces the termination test false


class SweepError(ValueError):
    """Failure at one sweep grid point; carries the point index."""

    def __init__(self, point: int, cause: Exception):
        super().__init__(f"sweep point {point}: {cause}")
        self.point = point


@dataclass(frozen=True, slots=True)
class LatencyStats:
    mean_ns: float
    std_ns: float
    median_ns: int
    p99_99_ns: int
    max_ns: int
    population: int


def _nearest_rank(ordered: Sequence[int], q: Fraction) -> int:
    # exact rational arithmetic: rank = ceil(q*n), 1-based
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def latency_stats(samples: Sequence[int]) -> LatencyStats | None:
    """Statistics over a delivered-latency population; ``None`` when empty."""
    n = len(samples)
    if n == 0:
        return None
    ordered = sorted(samples)
    s1 = sum(ordered)
    s2 = sum(x * x for x in ordered)
    # population variance from exact integer sums: (n*s2 - s1^2) / n^2
    var = Fraction(n * s2 - s1 * s1, n * n)
    return LatencyStats(
        mean_ns=s1 / n,
        std_ns=math.sqrt(var),
        median_ns=_nearest_rank(ordered, _MEDIAN_Q),
        p99_99_ns=_nearest_rank(ordered, _P9999_Q),
        max_ns=ordered[-1],
        population=n,
    )


@dataclass(frozen=True, slots=True)
class ChannelMetrics:
    early_bar: Fraction
    simplex_bar: Fraction
    attempts_bar: Fraction
    efficiency: Fraction
    latency: LatencyStats | None
    miss_10ms: Fraction | None
    miss_100ms: Fraction | None
    loss: Fraction


@dataclass(frozen=True, slots=True)
class LinkMetrics:
    early_bar: Fraction
    simplex_bar: Fraction
    attempts_bar_pow: Fraction
    efficiency_pow: Fraction
    efficiency_floor: Fraction  # lower bound on DA efficiency
    load_vs_pow: Fraction  # upper bound, 1 when no DA
    load_vs_simplex: Fraction  # upper bound vs a single conventional channel
    latency: LatencyStats | None
    miss_10ms: Fraction | None
    miss_100ms: Fraction | None
    loss: Fraction


@dataclass(frozen=True, slots=True)
class ReportParams:
    mode: DaMode
    t_lre_ns: int
    t_d_ns: int
    failed_copy_policy: FailedCopyPolicy
    lost_copy_policy: str  # "measured-max" or "fixed"
    lost_copy_charge: int


@dataclass(frozen=True, slots=True)
class MetricsReport:
    params: ReportParams
    n_packets: int
    log_deferral_ns: int
    channels: dict[str, ChannelMetrics]
    link: LinkMetrics

    def same_metrics(self, other: "MetricsReport") -> bool:
        """Equality of every measured quantity, ignoring the params echo."""
        return (
            self.n_packets == other.n_packets
            and self.channels == other.channels
            and self.link == other.link
        )


def _resolve(run: RunLog, params: DaParams) -> tuple[int, bool]:
    """Effective displacement and whether flags use recorded timestamps.

    Logs generated with real request displacement are analyzed on their
    recorded timestamps (the displacement is already physical); a TDD
    request must then either leave ``t_d_ns`` at zero or match the log.
    Non-deferred logs are displaced virtually.
    """
    if params.mode is not DaMode.TDD:
        return params.t_d_ns, True
    if len(run.channels) != 2:
        raise ValueError("TDD analysis is defined for duplex logs only")
    if run.meta.deferral_ns != 0:
        if params.t_d_ns not in (0, run.meta.deferral_ns):
            raise ValueError(
                "log already carries a real displacement of "
                f"{run.meta.deferral_ns} ns; omit t_d or pass the same value"
            )
        return run.meta.deferral_ns, True
    return params.t_d_ns, False


@dataclass(frozen=True, slots=True)
class _Accumulated:
    """Raw per-run tallies, independent of the evaluation path."""

    early_sum: list[int]
    simplex_sum: list[int]
    simplex_link_count: int
    attempts_delivered: list[int]
    lost_count: list[int]
    max_delivered_attempts: int
    chan_latencies: list[list[int]]
    chan_miss: list[list[int]]
    link_latencies: list[int]
    link_miss: list[int]
    link_lost: int


def _accumulate_generic(
    run: RunLog, params: DaParams, t_d: int, recorded: bool
) -> _Accumulated:
    """Per-packet evaluation; works for any channel count."""
    channels = run.channels
    phy_by = run.phy_by_channel()
    mode = params.mode
    policy = params.failed_copy_policy
    t_lre = params.t_lre_ns
    m = len(channels)
    pos = {c: j for j, c in enumerate(channels)}

    early_sum = [0] * m
    simplex_sum = [0] * m
    attempts_delivered = [0] * m
    lost_count = [0] * m
    chan_latencies: list[list[int]] = [[] for _ in range(m)]
    chan_miss = [[0, 0] for _ in range(m)]
    max_delivered_attempts = 0
    simplex_link_count = 0
    link_latencies: list[int] = []
    link_miss = [0, 0]
    link_lost = 0

    for packet in run.packets:
        if mode is not DaMode.POW:
            if recorded:
                flags: DaFlags = rda_flags(packet, t_lre, phy_by, policy)
            else:
                flags = tdd_flags(packet, t_d, t_lre, phy_by, policy)
            flags = simplex_flags(packet, flags)
            for c, v in flags.early.items():
                if v:
                    early_sum[pos[c]] += 1
            for c, v in flags.simplex.items():
                if v:
                    simplex_sum[pos[c]] += 1
            if flags.simplex_link:
                simplex_link_count += 1

        for j, c in enumerate(channels):
            copy = packet.copies[c]
            if copy.lost:
                lost_count[j] += 1
                continue
            if copy.attempts > max_delivered_attempts:
                max_delivered_attempts = copy.attempts
            attempts_delivered[j] += copy.attempts
            latency = copy_latency(copy, phy_by[c])
            chan_latencies[j].append(latency)
            if latency > MISS_THRESHOLDS_NS[0]:
                chan_miss[j][0] += 1
                if latency > MISS_THRESHOLDS_NS[1]:
                    chan_miss[j][1] += 1

        if recorded:
            link_latency = link_outcome(packet, phy_by).latency_ns
        else:
            link_latency = tdd_latency(packet, t_d, phy_by)
        if link_latency is None:
            link_lost += 1
        else:
            link_latencies.append(link_latency)
            if link_latency > MISS_THRESHOLDS_NS[0]:
                link_miss[0] += 1
                if link_latency > MISS_THRESHOLDS_NS[1]:
                    link_miss[1] += 1

    return _Accumulated(
        early_sum,
        simplex_sum,
        simplex_link_count,
        attempts_delivered,
        lost_count,
        max_delivered_attempts,
        chan_latencies,
        chan_miss,
        link_latencies,
        link_miss,
        link_lost,
    )


@dataclass(frozen=True, slots=True)
class _DuplexColumns:
    """Per-packet arrays of a duplex log, in channel-index order."""

    policy: FailedCopyPolicy
    req: np.ndarray  # (2, n) request times
    end: np.ndarray  # (2, n) end-of-transmission times
    rx: np.ndarray  # (2, n) receive times, valid where not lost
    tw: np.ndarray  # (2, n) final-attempt starts, _TW_EXCLUDED when unusable
    lost: np.ndarray  # (2, n) bool
    attempts: np.ndarray  # (2, n)


def _extract_duplex(run: RunLog, policy: FailedCopyPolicy) -> _DuplexColumns:
    channels = run.channels
    phys = [run.phy_by_channel()[c] for c in channels]
    req: list[list[int]] = [[], []]
    end: list[list[int]] = [[], []]
    rx: list[list[int]] = [[], []]
    tw: list[list[int]] = [[], []]
    lost: list[list[bool]] = [[], []]
    attempts: list[list[int]] = [[], []]
    for packet in run.packets:
        for j in (0, 1):
            copy = packet.copies[channels[j]]
            req[j].append(copy.request_ns)
            end[j].append(copy.end_ns)
            attempts[j].append(copy.attempts)
            lost[j].append(copy.lost)
            if copy.lost:
                rx[j].append(0)
                start = policy_final_start(copy, phys[j], policy)
                tw[j].append(_TW_EXCLUDED if start is None else start)
            else:
                rx[j].append(receive_time(copy, phys[j]))
                tw[j].append(final_attempt_start(copy, phys[j]))
    return _DuplexColumns(
        policy=policy,
        req=np.array(req, dtype=np.int64),
        end=np.array(end, dtype=np.int64),
        rx=np.array(rx, dtype=np.int64),
        tw=np.array(tw, dtype=np.int64),
        lost=np.array(lost, dtype=bool),
        attempts=np.array(attempts, dtype=np.int64),
    )


def _count_misses(samples: np.ndarray) -> list[int]:
    return [
        int((samples > MISS_THRESHOLDS_NS[0]).sum()),
        int((samples > MISS_THRESHOLDS_NS[1]).sum()),
    ]


def _accumulate_duplex(
    cols: _DuplexColumns, params: DaParams, t_d: int, recorded: bool
) -> _Accumulated:
    """Vectorized evaluation of the duplex per-packet definitions."""
    lost = cols.lost
    delivered_link = ~(lost[0] & lost[1])
    t_lre = params.t_lre_ns

    if params.mode is DaMode.POW:
        early = np.zeros_like(lost)
        simplex = np.zeros_like(lost)
    elif recorded:
        # cross-ACK at the quickest delivered end; the quickest channel's
        # own flag is structurally false (its final start precedes its end)
        eff_end = np.where(lost, _FAR, cols.end)
        xack = eff_end.min(axis=0)
        early = delivered_link[None, :] & (xack[None, :] + t_lre < cols.tw)
        simplex = early & (cols.attempts == 1)
    else:
        early = np.empty_like(lost)
        early[1] = ~lost[0] & (cols.end[0] + t_lre < cols.tw[1] + t_d)
        early[0] = ~lost[1] & (cols.end[1] + t_d + t_lre < cols.tw[0])
        simplex = early & (cols.attempts == 1)

    delivered = ~lost
    if recorded:
        req_min = np.minimum(cols.req[0], cols.req[1])
        eff_rx = np.where(lost, _FAR, cols.rx)
        link_lat_all = eff_rx.min(axis=0) - req_min
    else:
        d0 = cols.rx[0] - cols.req[0] + max(0, -t_d)
        d1 = cols.rx[1] - cols.req[1] + max(0, t_d)
        link_lat_all = np.minimum(
            np.where(lost[0], _FAR, d0), np.where(lost[1], _FAR, d1)
        )
    link_samples = link_lat_all[delivered_link]

    chan_latencies = []
    chan_miss = []
    for j in (0, 1):
        samples = (cols.rx[j] - cols.req[j])[delivered[j]]
        chan_latencies.append(samples.tolist())
        chan_miss.append(_count_misses(samples))

    return _Accumulated(
        early_sum=[int(early[0].sum()), int(early[1].sum())],
        simplex_sum=[int(simplex[0].sum()), int(simplex[1].sum())],
        simplex_link_count=int((simplex[0] | simplex[1]).sum()),
        attempts_delivered=[
            int(cols.attempts[0][delivered[0]].sum()),
            int(cols.attempts[1][delivered[1]].sum()),
        ],
        lost_count=[int(lost[0].sum()), int(lost[1].sum())],
        max_delivered_attempts=(
            int(cols.attempts[delivered].max()) if delivered.any() else 0
        ),
        chan_latencies=chan_latencies,
        chan_miss=chan_miss,
        link_latencies=link_samples.tolist(),
        link_miss=_count_misses(link_samples),
        link_lost=int((~delivered_link).sum()),
    )


def _assemble(
    run: RunLog, params: DaParams, t_d: int, acc: _Accumulated
) -> MetricsReport:
    channels = run.channels
    phy_by = run.phy_by_channel()
    n = run.meta.n_packets

    if params.lost_copy_attempts is not None:
        lost_policy, charge = "fixed", params.lost_copy_attempts
    else:
        lost_policy = "measured-max"
        charge = acc.max_delivered_attempts or max(
            phy_by[c].retry_limit for c in channels
        )

    channel_metrics: dict[str, ChannelMetrics] = {}
    for j, c in enumerate(channels):
        attempts_total = acc.attempts_delivered[j] + acc.lost_count[j] * charge
        delivered = n - acc.lost_count[j]
        w_bar = Fraction(attempts_total, n)
        channel_metrics[c.label] = ChannelMetrics(
            early_bar=Fraction(acc.early_sum[j], n),
            simplex_bar=Fraction(acc.simplex_sum[j], n),
            attempts_bar=w_bar,
            efficiency=1 / w_bar,
            latency=latency_stats(acc.chan_latencies[j]),
            miss_10ms=Fraction(acc.chan_miss[j][0], delivered) if delivered else None,
            miss_100ms=Fraction(acc.chan_miss[j][1], delivered) if delivered else None,
            loss=Fraction(acc.lost_count[j], n),
        )

    e_bar_link = sum((m.early_bar for m in channel_metrics.values()), Fraction(0))
    w_bar_pow = sum((m.attempts_bar for m in channel_metrics.values()), Fraction(0))
    delivered_link = n - acc.link_lost
    link = LinkMetrics(
        early_bar=e_bar_link,
        simplex_bar=Fraction(acc.simplex_link_count, n),
        attempts_bar_pow=w_bar_pow,
        efficiency_pow=1 / w_bar_pow,
        efficiency_floor=1 / (w_bar_pow - e_bar_link),
        load_vs_pow=1 - e_bar_link / w_bar_pow,
        load_vs_simplex=len(channels) * (1 - e_bar_link / w_bar_pow),
        latency=latency_stats(acc.link_latencies),
        miss_10ms=(
            Fraction(acc.link_miss[0], delivered_link) if delivered_link else None
        ),
        miss_100ms=(
            Fraction(acc.link_miss[1], delivered_link) if delivered_link else None
        ),
        loss=Fraction(acc.link_lost, n),
    )
    return MetricsReport(
        params=ReportParams(
            mode=params.mode,
            t_lre_ns=params.t_lre_ns,
            t_d_ns=t_d,
            failed_copy_policy=params.failed_copy_policy,
            lost_copy_policy=lost_policy,
            lost_copy_charge=charge,
        ),
        n_packets=n,
        log_deferral_ns=run.meta.deferral_ns,
        channels=channel_metrics,
        link=link,
    )


def compute_report(run: RunLog, params: DaParams) -> MetricsReport:
    """Evaluate all per-channel and link metrics of a run under one
    duplication-avoidance configuration."""
    params.validate()
    t_d, recorded = _resolve(run, params)
    if len(run.channels) == 2:
        cols = _extract_duplex(run, params.failed_copy_policy)
        acc = _accumulate_duplex(cols, params, t_d, recorded)
    else:
        acc = _accumulate_generic(run, params, t_d, recorded)
    return _assemble(run, params, t_d, acc)


def compute_report_reference(run: RunLog, params: DaParams) -> MetricsReport:
    """Same result as :func:`compute_report` via the per-packet functions
    only; slower, used to cross-check the vectorized path."""
    params.validate()
    t_d, recorded = _resolve(run, params)
    return _assemble(run, params, t_d, _accumulate_generic(run, params, t_d, recorded))


def sweep(run: RunLog, grid: Sequence[DaParams]) -> list[MetricsReport]:
    """Evaluate one report per grid point, all from the same base log, so
    different mechanisms and parameters are compared on identical data."""
    if not grid:
        raise ValueError("sweep grid must not be empty")
    duplex = len(run.channels) == 2
    cols_by_policy: dict[FailedCopyPolicy, _DuplexColumns] = {}
    reports = []
    for point, params in enumerate(grid):
        try:
            params.validate()
            t_d, recorded = _resolve(run, params)
            if duplex:
                policy = params.failed_copy_policy
                if policy not in cols_by_policy:
                    cols_by_policy[policy] = _extract_duplex(run, policy)
                acc = _accumulate_duplex(cols_by_policy[policy], params, t_d, recorded)
            else:
                acc = _accumulate_generic(run, params, t_d, recorded)
            reports.append(_assemble(run, params, t_d, acc))
        except ValueError as exc:
            raise SweepError(point, exc) from exc
    return reports


@dataclass(frozen=True, slots=True)
class OracleSummary:
    """Exact attempt accounting from per-attempt traces."""

    attempts_bar_pow: Fraction  # recorded attempts per packet, all channels
    attempts_bar_da: Fraction  # ditto after exact early termination
    early_bar_exact: Fraction  # mean count of copies with >= 1 saved attempt


def oracle_attempt_summary(
    run: RunLog, t_lre_ns: int, t_d_ns: int = 0
) -> OracleSummary:
    """Aggregate the exact oracle over a full-trace log."""
    n = run.meta.n_packets
    total_pow = 0
    total_da = 0
    early_exact = 0
    for packet in run.packets:
        kept = oracle_saved_attempts(packet, t_lre_ns, t_d_ns)
        for c, copy in packet.copies.items():
            total_pow += copy.attempts
            total_da += kept[c]
            if kept[c] < copy.attempts:
                early_exact += 1
    return OracleSummary(
        attempts_bar_pow=Fraction(total_pow, n),
        attempts_bar_da=Fraction(total_da, n),
        early_bar_exact=Fraction(early_exact, n),
    )


# --- rendering ---------------------------------------------------------------


def _sig4(value: Fraction | float) -> float:
    return float(f"{float(value):.4g}")


def _pct(value: Fraction | None) -> float | None:
    return None if value is None else _sig4(100 * value)


def _latency_dict(stats: LatencyStats | None) -> dict | None:
    if stats is None:
        return None
    return {
        "mean_us": _sig4(stats.mean_ns / 1000),
        "std_us": _sig4(stats.std_ns / 1000),
        "median_us": _sig4(stats.median_ns / 1000),
        "p99_99_us": _sig4(stats.p99_99_ns / 1000),
        "max_us": _sig4(stats.max_ns / 1000),
        "population": stats.population,
    }


def report_to_dict(report: MetricsReport) -> dict:
    def channel_dict(m: ChannelMetrics) -> dict:
        return {
            "e_pct": _pct(m.early_bar),
            "z_pct": _pct(m.simplex_bar),
            "w_mean": _sig4(m.attempts_bar),
            "eta_pct": _pct(m.efficiency),
            "latency": _latency_dict(m.latency),
            "miss_10ms_pct": _pct(m.miss_10ms),
            "miss_100ms_pct": _pct(m.miss_100ms),
            "loss_pct": _pct(m.loss),
        }

    link = report.link
    return {
        "params": {
            "mode": report.params.mode.value,
            "t_lre_us": report.params.t_lre_ns / 1000,
            "t_d_us": report.params.t_d_ns / 1000,
            "failed_copy_policy": report.params.failed_copy_policy.value,
            "lost_copy_policy": report.params.lost_copy_policy,
            "lost_copy_charge": report.params.lost_copy_charge,
        },
        "n_packets": report.n_packets,
        "log_deferral_us": report.log_deferral_ns / 1000,
        "channels": {label: channel_dict(m) for label, m in report.channels.items()},
        "link": {
            "e_pct": _pct(link.early_bar),
            "z_pct": _pct(link.simplex_bar),
            "w_pow_mean": _sig4(link.attempts_bar_pow),
            "eta_pow_pct": _pct(link.efficiency_pow),
            "eta_check_pct": _pct(link.efficiency_floor),
            "theta_hat_pct": _pct(link.load_vs_pow),
            "Theta_hat_pct": _pct(link.load_vs_simplex),
            "latency": _latency_dict(link.latency),
            "miss_10ms_pct": _pct(link.miss_10ms),
            "miss_100ms_pct": _pct(link.miss_100ms),
            "loss_pct": _pct(link.loss),
        },
    }


SWEEP_CSV_COLUMNS = (
    "mode",
    "T_LRE_us",
    "T_D_us",
    "e_bar",
    "z_bar",
    "theta_hat",
    "Theta_hat",
    "eta_check",
    "d_mean_us",
    "d_p9999_us",
    "loss_pct",
    "miss10ms_pct",
    "miss100ms_pct",
)


def write_sweep_csv(reports: Iterable[MetricsReport], sink: IO[str]) -> None:
    """One row per grid point, ready for plotting."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(SWEEP_CSV_COLUMNS)
    for report in reports:
        link = report.link
        lat = link.latency
        writer.writerow(
            [
                report.params.mode.value,
                report.params.t_lre_ns / 1000,
                report.params.t_d_ns / 1000,
                _sig4(link.early_bar),
                _sig4(link.simplex_bar),
                _sig4(link.load_vs_pow),
                _sig4(link.load_vs_simplex),
                _sig4(link.efficiency_floor),
                _sig4(lat.mean_ns / 1000) if lat else "",
                _sig4(lat.p99_99_ns / 1000) if lat else "",
                _pct(link.loss),
                _pct(link.miss_10ms) if link.miss_10ms is not None else "",
                _pct(link.miss_100ms) if link.miss_100ms is not None else "",
            ]
        )
