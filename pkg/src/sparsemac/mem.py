"""Timing and energy model of the stacked nonvolatile memory system.

Geometry: channels x ranks x banks over 1 KB rows, with an on-package bus
moving one 32 B beat per t_burst.  Accesses are row-granular (no column
decoder), so a request must be row-aligned and span whole rows.

Read and write traffic live on fully separate paths: each channel has its
own read and write bus timeline, each bank a read row buffer and a write row
buffer, and each rank two independently power-managed ports.  Nothing a
write does can move a read's completion time, which is the decoupling
property the design claims; write-to-read data forwarding is not modeled
(this is a timing model, data never flows through it).

Writes land in the bank's write row buffer and complete at buffer speed; the
dirty bit defers the slow array write until the row is evicted by a write to
a different row, or a final flush.  There is no refresh anywhere: the array
is nonvolatile.

Rank ports power down adaptively: when an idle gap exceeds alpha times an
EWMA of past idle gaps, the port sleeps from that threshold point until the
next request, which then pays the wakeup latency.  Static energy integrates
the standby rate while awake and the powered-down rate while asleep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["MemoryConfig", "MemRequest", "MemoryModel", "peak_read_bandwidth"]


@dataclass
class MemoryConfig:
    capacity_bytes: int = 8 << 30
    channels: int = 2
    ranks_per_channel: int = 2
    banks_per_rank: int = 16
    row_bytes: int = 1024
    bus_clock_hz: float = 2.0e9
    t_burst_ns: float = 0.5          # per beat
    beat_bytes: int = 32             # one 1 KB row = 32 beats = 16 ns
    rram_read_ns: float = 5.0
    rram_write_ns: float = 10.0
    wakeup_ns: float = 100.0
    ewma_weight: float = 0.25
    powerdown_alpha: float = 1.0     # threshold = alpha * EWMA(idle gaps)
    ewma_init_ns: float = 1000.0
    # energy constants (calibration placeholders; accounting identities only)
    e_row_read_pj: float = 500.0
    e_row_write_pj: float = 2000.0
    e_beat_pj: float = 10.0
    p_standby_mw: float = 5.0        # per rank port, while awake
    p_powered_down_mw: float = 0.1   # per rank port, while asleep

    def __post_init__(self):
        for name in ("capacity_bytes", "channels", "ranks_per_channel",
                     "banks_per_rank", "row_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.row_bytes % self.beat_bytes:
            raise ValueError("row_bytes must be a multiple of beat_bytes")
        min_rows = self.channels * self.ranks_per_channel * self.banks_per_rank
        if self.row_bytes * min_rows > self.capacity_bytes:
            raise ValueError("capacity too small for the geometry")

    @property
    def burst_ns(self) -> float:
        return (self.row_bytes // self.beat_bytes) * self.t_burst_ns

    @property
    def n_rows(self) -> int:
        return self.capacity_bytes // self.row_bytes

    def map_row(self, global_row: int):
        """Row-interleaved mapping: channel fastest, then rank, then bank."""
        channel = global_row % self.channels
        x = global_row // self.channels
        rank = x % self.ranks_per_channel
        y = x // self.ranks_per_channel
        bank = y % self.banks_per_rank
        row_id = y // self.banks_per_rank
        return channel, rank, bank, row_id


@dataclass
class MemRequest:
    kind: str          # "read" | "write"
    address: int       # byte offset, row-aligned
    nbytes: int        # whole rows
    issue_time: float  # ns


@dataclass
class _BankPort:
    buf_row: int | None = None
    dirty: bool = False           # meaningful on write ports only
    busy_until: float = 0.0       # array (cell access) timeline


@dataclass
class _RankPort:
    """Independently power-managed access port of one rank (read or write)."""

    ewma_idle: float
    last_busy_end: float = 0.0
    settled_to: float = 0.0
    standby_ns: float = 0.0
    down_ns: float = 0.0
    is_down: bool = False

    def _threshold(self, alpha: float) -> float:
        return alpha * self.ewma_idle

    def settle(self, now: float, alpha: float):
        """Integrate static-state time up to `now` without an access."""
        if now <= self.settled_to:
            return
        lo = max(self.settled_to, self.last_busy_end)
        self.standby_ns += max(0.0, min(now, self.last_busy_end) - self.settled_to)
        if now > self.last_busy_end:
            down_at = self.last_busy_end + self._threshold(alpha)
            self.standby_ns += max(0.0, min(now, down_at) - lo)
            if now > down_at:
                self.down_ns += now - max(lo, down_at)
                self.is_down = True
        self.settled_to = now

    def arrive(self, t: float, alpha: float, weight: float, wakeup: float):
        """Account the idle interval ending at `t`; returns (ready, was_down)."""
        self.settle(t, alpha)
        ready = t
        was_down = False
        if t > self.last_busy_end:
            gap = t - self.last_busy_end
            if self.is_down or gap > self._threshold(alpha):
                was_down = True
                ready = t + wakeup
                self.standby_ns += wakeup  # waking counts at the awake rate
                self.settled_to = ready
            self.ewma_idle = weight * gap + (1.0 - weight) * self.ewma_idle
        self.is_down = False
        return ready, was_down

    def finish(self, t: float):
        self.last_busy_end = max(self.last_busy_end, t)


class MemoryModel:
    """Single-timeline request-level simulator over one MemoryConfig.

    Callers serialize `access` calls per instance (requests in issue order);
    independent instances are freely parallel.
    """

    def __init__(self, config: MemoryConfig | None = None, keep_trace: bool = False):
        self.cfg = config or MemoryConfig()
        cfg = self.cfg
        self.read_path_free = [0.0] * cfg.channels
        self.write_path_free = [0.0] * cfg.channels
        nports = cfg.channels * cfg.ranks_per_channel
        nbanks = nports * cfg.banks_per_rank
        self.read_banks = [_BankPort() for _ in range(nbanks)]
        self.write_banks = [_BankPort() for _ in range(nbanks)]
        self.read_ports = [_RankPort(cfg.ewma_init_ns) for _ in range(nports)]
        self.write_ports = [_RankPort(cfg.ewma_init_ns) for _ in range(nports)]
        # counters
        self.array_reads = 0
        self.array_writes = 0
        self.beats = 0
        self.refreshes = 0  # stays zero: nonvolatile array
        self.read_hits = 0
        self.read_misses = 0
        self.bytes_moved = {"read": 0, "write": 0}
        self.trace = [] if keep_trace else None

    # -- indexing helpers ----------------------------------------------------

    def _bank_index(self, channel, rank, bank):
        cfg = self.cfg
        return (channel * cfg.ranks_per_channel + rank) * cfg.banks_per_rank + bank

    def _port_index(self, channel, rank):
        return channel * self.cfg.ranks_per_channel + rank

    # -- the access path -----------------------------------------------------

    def access(self, req: MemRequest) -> float:
        """Time one request; returns its completion (max over its rows)."""
        cfg = self.cfg
        if req.kind not in ("read", "write"):
            raise ValueError(f"unknown request kind {req.kind!r}")
        if req.address % cfg.row_bytes or req.nbytes % cfg.row_bytes or req.nbytes <= 0:
            raise ValueError("requests must be row-aligned and span whole rows")
        if req.address < 0 or req.address + req.nbytes > cfg.capacity_bytes:
            raise ValueError("address out of range")

        first_row = req.address // cfg.row_bytes
        done = req.issue_time
        for i in range(req.nbytes // cfg.row_bytes):
            done = max(done, self._access_row(req.kind, first_row + i, req.issue_time))
        self.bytes_moved[req.kind] += req.nbytes
        return done

    def _access_row(self, kind: str, global_row: int, issue: float) -> float:
        cfg = self.cfg
        channel, rank, bank, row_id = cfg.map_row(global_row)
        port_i = self._port_index(channel, rank)
        bank_i = self._bank_index(channel, rank, bank)
        beats = cfg.row_bytes // cfg.beat_bytes

        if kind == "read":
            port = self.read_ports[port_i]
            bp = self.read_banks[bank_i]
            ready, was_down = port.arrive(issue, cfg.powerdown_alpha, cfg.ewma_weight, cfg.wakeup_ns)
            hit = bp.buf_row == row_id
            if hit:
                self.read_hits += 1
                start = max(ready, self.read_path_free[channel])
            else:
                self.read_misses += 1
                t_arr = max(ready, bp.busy_until)
                data_ready = t_arr + cfg.rram_read_ns
                bp.busy_until = data_ready
                bp.buf_row = row_id
                self.array_reads += 1
                start = max(data_ready, self.read_path_free[channel])
            done = start + cfg.burst_ns
            self.read_path_free[channel] = done
            port.finish(done)
        else:
            port = self.write_ports[port_i]
            bp = self.write_banks[bank_i]
            ready, was_down = port.arrive(issue, cfg.powerdown_alpha, cfg.ewma_weight, cfg.wakeup_ns)
            hit = bp.buf_row == row_id
            start = max(ready, self.write_path_free[channel])
            if not hit and bp.dirty and bp.buf_row is not None:
                # evict the old dirty row to the array before reloading the buffer
                ev_start = max(start, bp.busy_until)
                ev_done = ev_start + cfg.rram_write_ns
                bp.busy_until = ev_done
                self.array_writes += 1
                start = max(start, ev_done)
            bp.buf_row = row_id
            bp.dirty = True
            done = start + cfg.burst_ns
            self.write_path_free[channel] = done
            port.finish(done)

        self.beats += beats
        if self.trace is not None:
            self.trace.append({
                "issue": issue, "kind": kind, "row": global_row,
                "completion": done, "hit": hit,
                "rank_state": "powered-down" if was_down else "active",
            })
        return done

    # -- policy / bookkeeping -------------------------------------------------

    def tick_power_policy(self, now: float):
        """Advance every rank port's power accounting to `now`."""
        for port in self.read_ports + self.write_ports:
            port.settle(now, self.cfg.powerdown_alpha)

    def rank_power_states(self, now: float):
        """(channel, rank) -> {'read': 'active'|'powered-down', 'write': ...}"""
        self.tick_power_policy(now)
        out = {}
        for ch in range(self.cfg.channels):
            for rk in range(self.cfg.ranks_per_channel):
                i = self._port_index(ch, rk)
                out[(ch, rk)] = {
                    "read": "powered-down" if self.read_ports[i].is_down else "active",
                    "write": "powered-down" if self.write_ports[i].is_down else "active",
                }
        return out

    def flush(self, now: float) -> float:
        """Write back every dirty row; returns the last write-back completion."""
        done = now
        for bp in self.write_banks:
            if bp.dirty and bp.buf_row is not None:
                start = max(now, bp.busy_until)
                bp.busy_until = start + self.cfg.rram_write_ns
                self.array_writes += 1
                bp.dirty = False
                done = max(done, bp.busy_until)
        return done

    def energy_pj(self, now: float) -> dict:
        """Event + static energy breakdown up to `now` (closure: total = sum)."""
        self.tick_power_policy(now)
        cfg = self.cfg
        standby_ns = sum(p.standby_ns for p in self.read_ports + self.write_ports)
        down_ns = sum(p.down_ns for p in self.read_ports + self.write_ports)
        parts = {
            "array_read": self.array_reads * cfg.e_row_read_pj,
            "array_write": self.array_writes * cfg.e_row_write_pj,
            "bus": self.beats * cfg.e_beat_pj,
            "standby": standby_ns * cfg.p_standby_mw,   # mW * ns = pJ
            "powered_down": down_ns * cfg.p_powered_down_mw,
        }
        parts["total"] = sum(parts.values())
        return parts


def peak_read_bandwidth(cfg: MemoryConfig) -> float:
    """Analytic peak: every channel streaming rows back to back (bytes/s)."""
    return cfg.channels * cfg.row_bytes / (cfg.burst_ns * 1e-9)


def bandwidth(cfg: MemoryConfig, trace) -> dict:
    """Measured throughput per path over a request trace (bytes/second)."""
    if not trace:
        raise ValueError("empty trace")
    model = MemoryModel(cfg)
    first = {"read": None, "write": None}
    last = {"read": 0.0, "write": 0.0}
    for req in trace:
        done = model.access(req)
        if first[req.kind] is None:
            first[req.kind] = req.issue_time
        last[req.kind] = max(last[req.kind], done)
    out = {}
    for kind in ("read", "write"):
        if first[kind] is None:
            out[kind] = 0.0
        else:
            span_ns = max(last[kind] - first[kind], model.cfg.burst_ns)
            out[kind] = model.bytes_moved[kind] / (span_ns * 1e-9)
    return out
