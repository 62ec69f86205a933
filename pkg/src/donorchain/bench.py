"""Benchmark harness: closed-loop (fixed-load) and open-loop (fixed-rate)
workloads against a pluggable target, with throughput/latency reports.

Fixed-load keeps exactly `load` transactions in flight, reissuing as each
completes, so concurrency equals the load setting. Fixed-rate issues on a
uniform schedule regardless of completions; when the issuing side cannot
keep up, the achieved rate is reported from real issue timestamps, never
from the configured rate. Reports render as JSON or as an aligned text
table with columns Name, Load (or Configured Send Rate), Send Rate,
Max/Min/Avg Latency, Throughput.
"""

import json
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol

import yaml

from .chaincode import BLOOD_GROUPS, GENDERS, ORGANS

# window arithmetic guards against a zero-length span (single tx)
_MIN_SPAN = 1e-9


class BenchError(Exception):
    pass


class EmptyObservationsError(BenchError):
    pass


class TargetUnreachableError(BenchError):
    pass


class Operation(str, Enum):
    CREATE = "create_record"
    READ = "read_record"


class BenchMode(str, Enum):
    FIXED_LOAD = "fixed_load"
    FIXED_RATE = "fixed_rate"


@dataclass
class WorkloadConfig:
    name: str
    operation: Operation
    mode: BenchMode
    total_tx: int
    load: Optional[int] = None       # fixed-load only
    rate_tps: Optional[float] = None  # fixed-rate only
    workers: int = 4                  # fixed-rate issuing threads
    seed: int = 0

    def validate(self) -> None:
        if self.total_tx < 1:
            raise ValueError("total_tx must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.mode is BenchMode.FIXED_LOAD:
            if self.load is None or self.load < 1:
                raise ValueError("fixed_load requires load >= 1")
            if self.rate_tps is not None:
                raise ValueError("rate_tps does not apply to fixed_load")
        else:
            if self.rate_tps is None or self.rate_tps <= 0:
                raise ValueError("fixed_rate requires rate_tps > 0")
            if self.load is not None:
                raise ValueError("load does not apply to fixed_rate")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "operation": self.operation.value,
            "mode": self.mode.value,
            "total_tx": self.total_tx,
            "load": self.load,
            "rate_tps": self.rate_tps,
            "workers": self.workers,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TxObservation:
    tx_id: str
    issued_at: float
    completed_at: float
    ok: bool
    fail_reason: Optional[str] = None
    # fixed-rate runs set the scheduled issue time; latency is measured from
    # it so a lagging driver cannot hide queueing delay (coordinated omission)
    scheduled_at: Optional[float] = None

    def __post_init__(self):
        if self.completed_at < self.issued_at:
            raise ValueError("completed_at precedes issued_at")
        if self.scheduled_at is not None and self.scheduled_at > self.issued_at:
            raise ValueError("issued_at precedes scheduled_at")

    @property
    def latency_s(self) -> float:
        start = self.issued_at if self.scheduled_at is None else self.scheduled_at
        return self.completed_at - start


@dataclass
class LatencyStats:
    min_s: float
    max_s: float
    avg_s: float


@dataclass
class BenchmarkReport:
    config: WorkloadConfig
    success: int
    fail: int
    fail_reasons: dict[str, int]
    actual_send_rate_tps: float
    throughput_tps: float
    latency: Optional[LatencyStats]  # None when nothing succeeded
    window_s: float
    max_in_flight: int

    def validate(self) -> None:
        assert self.success + self.fail == self.config.total_tx, "lost observations"
        if self.latency is not None:
            assert self.latency.min_s <= self.latency.avg_s <= self.latency.max_s
        assert self.throughput_tps <= self.actual_send_rate_tps + 1e-9

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "success": self.success,
            "fail": self.fail,
            "fail_reasons": dict(sorted(self.fail_reasons.items())),
            "actual_send_rate_tps": self.actual_send_rate_tps,
            "throughput_tps": self.throughput_tps,
            "latency": None
            if self.latency is None
            else {
                "min_s": self.latency.min_s,
                "max_s": self.latency.max_s,
                "avg_s": self.latency.avg_s,
            },
            "window_s": self.window_s,
            "max_in_flight": self.max_in_flight,
        }


def aggregate(
    config: WorkloadConfig,
    observations: list[TxObservation],
    max_in_flight: int = 0,
) -> BenchmarkReport:
    """Throughput = successes over [first issue, last completion]; send rate
    = issued over [first issue, last issue]; latency over successes only,
    counted from the scheduled time when the observation carries one."""
    if not observations:
        raise EmptyObservationsError("no observations to aggregate")
    first_issue = min(o.issued_at for o in observations)
    last_issue = max(o.issued_at for o in observations)
    last_completion = max(o.completed_at for o in observations)
    window = max(last_completion - first_issue, _MIN_SPAN)
    issue_span = max(last_issue - first_issue, _MIN_SPAN)
    successes = [o for o in observations if o.ok]
    fails = [o for o in observations if not o.ok]
    reasons: dict[str, int] = {}
    for o in fails:
        reasons[o.fail_reason or "unknown"] = reasons.get(o.fail_reason or "unknown", 0) + 1
    latency = None
    if successes:
        lats = [o.latency_s for o in successes]
        latency = LatencyStats(min_s=min(lats), max_s=max(lats), avg_s=sum(lats) / len(lats))
    report = BenchmarkReport(
        config=config,
        success=len(successes),
        fail=len(fails),
        fail_reasons=reasons,
        actual_send_rate_tps=len(observations) / issue_span,
        throughput_tps=len(successes) / window,
        latency=latency,
        window_s=window,
        max_in_flight=max_in_flight,
    )
    report.validate()
    return report


# -- payloads -----------------------------------------------------------------


def random_record(rng: random.Random, record_id: str) -> dict:
    first = rng.choice(("Alex", "Sam", "Noor", "Kai", "Rin", "Ola", "Mia", "Tom"))
    last = rng.choice(("Ahmed", "Silva", "Chen", "Okafor", "Novak", "Haddad"))
    return {
        "ID": record_id,
        "firstName": first,
        "lastName": last,
        "age": rng.randint(1, 90),
        "phoneNumber": str(rng.randint(10**9, 10**10 - 1)),
        "address": f"{rng.randint(1, 999)} Main St",
        "organRequired": rng.choice(ORGANS),
        "bloodgroup": rng.choice(BLOOD_GROUPS),
        "gender": rng.choice(GENDERS),
        "medhistory": rng.choice(("none", "diabetes", "hypertension")),
    }


class BenchTarget(Protocol):
    """What a workload drives. create_record must not return until the write
    is final (committed Valid) so latency covers the full path."""

    def create_record(self, record: dict) -> None: ...

    def read_record(self, record_id: str) -> dict: ...


class _Driver:
    """Shared issuing machinery: budget, payloads, in-flight audit."""

    def __init__(self, config: WorkloadConfig, target: BenchTarget, read_ids: list[str]):
        self.config = config
        self.target = target
        self.read_ids = read_ids
        self.rng = random.Random(config.seed)
        self.observations: list[TxObservation] = []
        self._obs_lock = threading.Lock()
        self._budget = config.total_tx
        self._budget_lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight = 0
        self._payloads = [
            random_record(self.rng, f"bench-{config.seed}-{i}")
            for i in range(config.total_tx if config.operation is Operation.CREATE else 0)
        ]

    def claim(self) -> Optional[int]:
        with self._budget_lock:
            if self._budget == 0:
                return None
            self._budget -= 1
            return self.config.total_tx - self._budget - 1

    def issue(self, seq: int, due: Optional[float] = None) -> TxObservation:
        with self._budget_lock:
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        issued = time.monotonic()
        ok, reason = True, None
        try:
            if self.config.operation is Operation.CREATE:
                self.target.create_record(self._payloads[seq])
            else:
                self.target.read_record(self.read_ids[seq % len(self.read_ids)])
        except Exception as exc:
            ok, reason = False, type(exc).__name__
        completed = time.monotonic()
        with self._budget_lock:
            self._in_flight -= 1
        obs = TxObservation(
            tx_id=f"{self.config.name}-{seq}",
            issued_at=issued,
            completed_at=completed,
            ok=ok,
            fail_reason=reason,
            scheduled_at=None if due is None else min(due, issued),
        )
        with self._obs_lock:
            self.observations.append(obs)
        return obs


def _prepare_read_ids(config: WorkloadConfig, target: BenchTarget) -> list[str]:
    """Pre-populate records for read workloads, outside the measured window."""
    if config.operation is not Operation.READ:
        return []
    rng = random.Random(config.seed ^ 0x5EED)
    count = min(config.total_tx, 200)
    ids = [f"seed-{config.seed}-{i}" for i in range(count)]
    for record_id in ids:
        target.create_record(random_record(rng, record_id))
    return ids


def run_fixed_load(config: WorkloadConfig, target: BenchTarget) -> BenchmarkReport:
    config.validate()
    if config.mode is not BenchMode.FIXED_LOAD:
        raise ValueError("config.mode must be fixed_load")
    driver = _Driver(config, target, _prepare_read_ids(config, target))

    def slot():
        while True:
            seq = driver.claim()
            if seq is None:
                return
            driver.issue(seq)

    threads = [
        threading.Thread(target=slot, name=f"bench-slot-{i}", daemon=True)
        for i in range(min(config.load, config.total_tx))
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return aggregate(config, driver.observations, driver.max_in_flight)


def run_fixed_rate(config: WorkloadConfig, target: BenchTarget) -> BenchmarkReport:
    config.validate()
    if config.mode is not BenchMode.FIXED_RATE:
        raise ValueError("config.mode must be fixed_rate")
    driver = _Driver(config, target, _prepare_read_ids(config, target))
    start = time.monotonic() + 0.01
    interval = 1.0 / config.rate_tps

    def worker():
        while True:
            seq = driver.claim()
            if seq is None:
                return
            due = start + seq * interval
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            driver.issue(seq, due=due)

    threads = [
        threading.Thread(target=worker, name=f"bench-rate-{i}", daemon=True)
        for i in range(config.workers)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return aggregate(config, driver.observations, driver.max_in_flight)


def run_workload(config: WorkloadConfig, target: BenchTarget) -> BenchmarkReport:
    if config.mode is BenchMode.FIXED_LOAD:
        return run_fixed_load(config, target)
    return run_fixed_rate(config, target)


# -- targets ------------------------------------------------------------------


class StubTarget:
    """Deterministic in-memory target for harness tests."""

    def __init__(self, delay_s: float = 0.0, fail_every: int = 0):
        self.delay_s = delay_s
        self.fail_every = fail_every
        self.records: dict[str, dict] = {}
        self.calls = 0
        self._lock = threading.Lock()

    def _tick(self) -> int:
        with self._lock:
            self.calls += 1
            return self.calls

    def create_record(self, record: dict) -> None:
        n = self._tick()
        if self.delay_s:
            time.sleep(self.delay_s)
        if self.fail_every and n % self.fail_every == 0:
            raise TargetUnreachableError("synthetic failure")
        self.records[record["ID"]] = record

    def read_record(self, record_id: str) -> dict:
        n = self._tick()
        if self.delay_s:
            time.sleep(self.delay_s)
        if self.fail_every and n % self.fail_every == 0:
            raise TargetUnreachableError("synthetic failure")
        return self.records.get(record_id, {})


class NetworkTarget:
    """Drives an in-process network: creates are the full endorse-order-commit
    path, reads are the endorse-only query path."""

    def __init__(self, running, identity_id: str, channel: str = "donation-system"):
        from .ledger import TxFlag
        from .network import Proposal

        self._Proposal = Proposal
        self._valid = TxFlag.VALID
        self.network = running.network
        self.channel = channel
        self.identity = running.registry.identity(identity_id)
        self.key = running.wallet[identity_id]

    def create_record(self, record: dict) -> None:
        prop = self._Proposal(
            self.channel, "donation", "addDonor", (json.dumps(record),), self.identity.identity_id
        )
        _tx_id, _result, event = self.network.invoke(self.identity, self.key, prop, timeout=60.0)
        if event.flag is not self._valid:
            raise BenchError(f"commit flag {event.flag.value}")

    def read_record(self, record_id: str) -> dict:
        prop = self._Proposal(
            self.channel, "donation", "getDonor", (record_id,), self.identity.identity_id
        )
        return self.network.query(prop)


class GatewayTarget:
    """Drives a gateway over HTTP with a bearer token."""

    def __init__(self, base_url: str, token: str, timeout: float = 60.0):
        import httpx

        self._client = httpx.Client(
            base_url=base_url,
            headers={"Authorization": f"Bearer {token}"},
            timeout=timeout,
        )

    def create_record(self, record: dict) -> None:
        resp = self._client.post("/donors", json=record)
        if resp.status_code >= 400:
            raise TargetUnreachableError(f"HTTP {resp.status_code}: {resp.text[:200]}")

    def read_record(self, record_id: str) -> dict:
        resp = self._client.get(f"/donors/{record_id}")
        if resp.status_code >= 400:
            raise TargetUnreachableError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def close(self) -> None:
        self._client.close()


# -- config files and report rendering ------------------------------------------


def load_bench_config(path: str | Path) -> list[WorkloadConfig]:
    text = Path(path).read_text()
    doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if isinstance(doc, dict):
        doc = doc.get("workloads", [])
    configs = []
    for raw in doc:
        cfg = WorkloadConfig(
            name=raw["name"],
            operation=Operation(raw["operation"]),
            mode=BenchMode(raw["mode"]),
            total_tx=int(raw["total_tx"]),
            load=raw.get("load"),
            rate_tps=raw.get("rate_tps"),
            workers=int(raw.get("workers", 4)),
            seed=int(raw.get("seed", 0)),
        )
        cfg.validate()
        configs.append(cfg)
    return configs


_LOAD_COLUMNS = (
    "Name", "Transaction Load", "Send Rate (TPS)", "Max Latency (s)",
    "Min Latency (s)", "Avg Latency (s)", "Throughput (TPS)",
)
_RATE_COLUMNS = (
    "Name", "Configured Send Rate (TPS)", "Actual Send Rate (TPS)", "Max Latency (s)",
    "Min Latency (s)", "Avg Latency (s)", "Throughput (TPS)",
)


def _rows(reports: list[BenchmarkReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        lat = r.latency
        setting = (
            str(r.config.load)
            if r.config.mode is BenchMode.FIXED_LOAD
            else f"{r.config.rate_tps:g}"
        )
        rows.append(
            [
                r.config.name,
                setting,
                f"{r.actual_send_rate_tps:.1f}",
                f"{lat.max_s:.2f}" if lat else "-",
                f"{lat.min_s:.2f}" if lat else "-",
                f"{lat.avg_s:.2f}" if lat else "-",
                f"{r.throughput_tps:.1f}",
            ]
        )
    return rows


def render_text_table(reports: list[BenchmarkReport]) -> str:
    """One aligned table per mode, columns ordered as in the result tables."""
    sections = []
    for mode, columns in ((BenchMode.FIXED_LOAD, _LOAD_COLUMNS), (BenchMode.FIXED_RATE, _RATE_COLUMNS)):
        subset = [r for r in reports if r.config.mode is mode]
        if not subset:
            continue
        rows = [list(columns)] + _rows(subset)
        widths = [max(len(row[i]) for row in rows) for i in range(len(columns))]
        lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        sections.append("\n".join(lines))
    return "\n\n".join(sections)


def render_json(reports: list[BenchmarkReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def report_from_dict(raw: dict) -> BenchmarkReport:
    """Inverse of BenchmarkReport.to_dict, for re-rendering saved runs."""
    cfg = raw["config"]
    config = WorkloadConfig(
        name=cfg["name"],
        operation=Operation(cfg["operation"]),
        mode=BenchMode(cfg["mode"]),
        total_tx=int(cfg["total_tx"]),
        load=cfg.get("load"),
        rate_tps=cfg.get("rate_tps"),
        workers=int(cfg.get("workers", 4)),
        seed=int(cfg.get("seed", 0)),
    )
    lat = raw.get("latency")
    return BenchmarkReport(
        config=config,
        success=int(raw["success"]),
        fail=int(raw["fail"]),
        fail_reasons=dict(raw.get("fail_reasons", {})),
        actual_send_rate_tps=float(raw["actual_send_rate_tps"]),
        throughput_tps=float(raw["throughput_tps"]),
        latency=None if lat is None else LatencyStats(lat["min_s"], lat["max_s"], lat["avg_s"]),
        window_s=float(raw["window_s"]),
        max_in_flight=int(raw["max_in_flight"]),
    )
