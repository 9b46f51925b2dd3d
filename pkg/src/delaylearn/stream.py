"""In-process replay of the real-time click stream architecture.

An append-ordered click log and a keyed conversion store stand in for the
production queue and cache. Each head keeps its own cursor into the log and
only consumes a click once the head's wait time has elapsed past the click
timestamp, so a head can never see a label before it could exist. The store
is preloaded from the fixture (the fixture knows the future) but a head only
reads it at consumption time, which makes the observable training sequence
identical to real-time arrival.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .features import Featurizer, RawRecord, SparseVector, TsvSchema, read_tsv
from .glm import TrainConfig
from .multihead import MultiHeadModel
from .windows import DelayWindows, quantize

FIXTURE_MANIFEST = "manifest.json"
FIXTURE_FORMAT = "delaylearn-fixture"

#: Called for every training consumption: (head, click_id, label_scalar).
TrainEventHook = Callable[[int, str, float], None]


class StreamError(RuntimeError):
    """Simulator protocol violation (clock regression, bad store, ...)."""


class LabelLeakageError(StreamError):
    """A head was about to train on a click before its wait elapsed."""


class ClickLog:
    """Append-ordered clicks with hashed features, stored CSR-style."""

    __slots__ = ("ids", "ts", "_indptr", "_indices", "_values")

    def __init__(self, ids: list[str], ts: np.ndarray, indptr: np.ndarray,
                 indices: np.ndarray, values: np.ndarray):
        self.ids = ids
        self.ts = ts
        self._indptr = indptr
        self._indices = indices
        self._values = values

    @classmethod
    def build(cls, entries: Iterable[tuple[str, float, SparseVector]]) -> "ClickLog":
        ids: list[str] = []
        ts: list[float] = []
        indptr: list[int] = [0]
        idx_chunks: list[np.ndarray] = []
        val_chunks: list[np.ndarray] = []
        seen: set[str] = set()
        last = -np.inf
        for click_id, click_ts, x in entries:
            if click_ts < last:
                raise StreamError(
                    f"click {click_id}: timestamps must be non-decreasing"
                )
            if click_id in seen:
                raise StreamError(f"duplicate click_id {click_id!r}")
            seen.add(click_id)
            last = click_ts
            ids.append(click_id)
            ts.append(click_ts)
            idx_chunks.append(x.indices)
            val_chunks.append(x.values)
            indptr.append(indptr[-1] + len(x))
        return cls(
            ids,
            np.asarray(ts, dtype=np.float64),
            np.asarray(indptr, dtype=np.int64),
            np.concatenate(idx_chunks) if idx_chunks else np.empty(0, np.int64),
            np.concatenate(val_chunks) if val_chunks else np.empty(0, np.float64),
        )

    def __len__(self) -> int:
        return len(self.ids)

    def feature(self, j: int) -> SparseVector:
        lo, hi = self._indptr[j], self._indptr[j + 1]
        return SparseVector(self._indices[lo:hi], self._values[lo:hi],
                            validate=False)

    @property
    def end_ts(self) -> float:
        return float(self.ts[-1]) if len(self.ids) else 0.0


class ConversionStore:
    """click_id -> (delay, value), at most one conversion per click.

    The production analogue is a cache keyed by click id; here it is a dict
    validated against the full window on insert.
    """

    def __init__(self, full_window: float):
        if full_window <= 0:
            raise StreamError(f"full window must be positive, got {full_window}")
        self.full_window = full_window
        self._map: dict[str, tuple[float, float]] = {}

    def add(self, click_id: str, delay: float, value: float) -> None:
        if not 0.0 < delay <= self.full_window:
            raise StreamError(
                f"conversion for {click_id!r} has delay {delay} outside "
                f"(0, {self.full_window}]"
            )
        if value < 0:
            raise StreamError(f"conversion for {click_id!r} has negative value")
        # first conversion wins; clicks convert at most once
        self._map.setdefault(click_id, (delay, value))

    def get(self, click_id: str) -> Optional[tuple[float, float]]:
        return self._map.get(click_id)

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, click_id: str) -> bool:
        return click_id in self._map

    def items(self):
        return self._map.items()


@dataclass
class StreamState:
    """Per-head read positions plus the simulation clock."""

    cursors: list[int]
    sim_clock: float = 0.0

    @classmethod
    def fresh(cls, n_heads: int) -> "StreamState":
        return cls(cursors=[0] * n_heads, sim_clock=0.0)


def build_stream(records: Iterable[RawRecord], featurizer: Featurizer,
                 full_window: float) -> tuple[ClickLog, ConversionStore]:
    """Featurize records into a click log and load their conversions."""
    store = ConversionStore(full_window)

    def entries():
        for rec in records:
            if rec.converted:
                store.add(rec.click_id, rec.conversion_delay, rec.conversion_value)
            yield rec.click_id, rec.click_ts, featurizer.featurize(rec)

    log = ClickLog.build(entries())
    return log, store


def advance(state: StreamState, log: ClickLog, store: ConversionStore,
            mh: MultiHeadModel, cfg: TrainConfig, new_clock: float,
            on_event: Optional[TrainEventHook] = None) -> None:
    """Move the clock forward, training every due (head, click) pair.

    Head i consumes log entries in order while click_ts + t_i <= new_clock.
    The label is the conversion's membership in the head's window, read
    from the store at consumption time. Granularity only affects label
    latency, never which pairs are ultimately trained.
    """
    if new_clock < state.sim_clock:
        raise StreamError(
            f"clock regression: {new_clock} < {state.sim_clock}"
        )
    windows = mh.windows
    if len(state.cursors) != windows.n_heads:
        raise StreamError("stream state does not match the model's head count")
    ts = log.ts
    n = len(log)
    for head in range(windows.n_heads):
        wait = windows.boundaries[head + 1]
        cursor = state.cursors[head]
        while cursor < n and ts[cursor] + wait <= new_clock:
            _consume(log, store, mh, cfg, head, wait, cursor, new_clock, on_event)
            cursor += 1
        state.cursors[head] = cursor
    state.sim_clock = new_clock


def _consume(log: ClickLog, store: ConversionStore, mh: MultiHeadModel,
             cfg: TrainConfig, head: int, wait: float, cursor: int,
             clock: float, on_event: Optional[TrainEventHook]) -> None:
    """Train one (head, click) pair. Guards the no-leakage invariant at the
    mutation site: a head must never train before its wait has elapsed."""
    if log.ts[cursor] + wait > clock:
        raise LabelLeakageError(
            f"head {head} touched click {log.ids[cursor]!r} "
            f"{log.ts[cursor] + wait - clock:.3f}s early"
        )
    conv = store.get(log.ids[cursor])
    if conv is None:
        labels = quantize(None, None, mh.windows)
    else:
        labels = quantize(conv[0], conv[1], mh.windows)
    mh.train_example(head, log.feature(cursor), labels, cfg)
    if on_event is not None:
        scalar = float(labels.y_i[head] if mh.kind == "logistic"
                       else labels.v_i[head])
        on_event(head, log.ids[cursor], scalar)


class MholStreamTrainer:
    """Drives a MultiHeadModel over the simulated stream.

    Exposes the trainer surface shared by the baselines: advance() to a new
    clock, predict() for the current model state, and a finish clock after
    which every head has consumed the whole log.
    """

    def __init__(self, log: ClickLog, store: ConversionStore,
                 mh: MultiHeadModel, cfg: TrainConfig,
                 on_event: Optional[TrainEventHook] = None):
        self.log = log
        self.store = store
        self.model = mh
        self.cfg = cfg
        self.state = StreamState.fresh(mh.windows.n_heads)
        self.on_event = on_event

    @property
    def name(self) -> str:
        return "mhol"

    def advance(self, new_clock: float) -> None:
        advance(self.state, self.log, self.store, self.model, self.cfg,
                new_clock, on_event=self.on_event)

    def predict(self, x: SparseVector) -> float:
        if self.model.kind == "logistic":
            return self.model.predict_cvr_raw(x)
        return self.model.predict_vpc(x)

    @property
    def finish_clock(self) -> float:
        return self.log.end_ts + self.model.windows.full_window

    def run_to_completion(self) -> None:
        self.advance(self.finish_clock)


@dataclass
class Fixture:
    """A loaded fixture: replayable stream plus its manifest."""

    log: ClickLog
    store: ConversionStore
    manifest: dict
    records: list[RawRecord] = field(repr=False, default_factory=list)

    @property
    def horizon(self) -> float:
        return float(self.manifest["n_days"]) * 86400.0

    @property
    def full_window(self) -> float:
        return float(self.manifest["full_window_seconds"])


def load_fixture(directory, hash_bits: int, crosses: bool = True,
                 hash_seed: Optional[int] = None,
                 keep_records: bool = False) -> Fixture:
    """Load a fixture directory (manifest + schema + clicks TSV) into a
    replayable stream, hashing features at the requested width."""
    path = os.path.join(directory, FIXTURE_MANIFEST)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise StreamError(f"cannot read fixture manifest: {exc}") from exc
    if manifest.get("format") != FIXTURE_FORMAT:
        raise StreamError(f"{path} is not a fixture manifest")
    schema = TsvSchema.load(os.path.join(directory, manifest["schema_file"]))
    kwargs = {} if hash_seed is None else {"seed": hash_seed}
    featurizer = Featurizer(hash_bits, crosses=crosses, **kwargs)
    full_window = float(manifest["full_window_seconds"])
    records = list(
        read_tsv(os.path.join(directory, manifest["clicks_file"]), schema,
                 full_window=full_window)
    )
    log, store = build_stream(records, featurizer, full_window)
    return Fixture(log, store, manifest, records if keep_records else [])
