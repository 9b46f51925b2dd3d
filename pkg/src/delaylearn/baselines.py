"""Reference single-model trainers: naive, shifted, and oracle.

Naive feeds every click as an immediate negative and every conversion as an
extra positive when it arrives (biased by construction). Shifted waits out
the full conversion window and trains each click once with its true final
label. Oracle is the clairvoyant upper bound: true final labels at click
time. All three drive one GlmModel over the same replayable log/store pair
and expose the same advance/predict surface as the multi-head stream
trainer, so the evaluation harness treats every method alike.
"""

from __future__ import annotations

from typing import Optional

from .features import SparseVector
from .glm import GlmModel, TrainConfig
from .multihead import MultiHeadModel
from .stream import ClickLog, ConversionStore, MholStreamTrainer, StreamError
from .windows import DelayWindows


def _final_labels(log: ClickLog, store: ConversionStore, logistic: bool) -> list[float]:
    """True end-of-window label per click: 1/value if converted else 0."""
    out = []
    for click_id in log.ids:
        conv = store.get(click_id)
        if conv is None:
            out.append(0.0)
        else:
            out.append(1.0 if logistic else float(conv[1]))
    return out


class _CursorTrainer:
    """Shared machinery: a sorted event sequence consumed against a clock."""

    name = "base"

    def __init__(self, log: ClickLog, store: ConversionStore,
                 model: GlmModel, cfg: TrainConfig):
        self.log = log
        self.store = store
        self.model = model
        self.cfg = cfg
        self.clock = 0.0
        self._cursor = 0

    def _due(self, cursor: int) -> float:
        raise NotImplementedError

    def _train(self, cursor: int) -> None:
        raise NotImplementedError

    def __len__(self) -> int:
        raise NotImplementedError

    def advance(self, new_clock: float) -> None:
        if new_clock < self.clock:
            raise StreamError(f"clock regression: {new_clock} < {self.clock}")
        cursor = self._cursor
        end = len(self)
        while cursor < end and self._due(cursor) <= new_clock:
            self._train(cursor)
            cursor += 1
        self._cursor = cursor
        self.clock = new_clock

    def predict(self, x: SparseVector) -> float:
        return self.model.predict(x)

    @property
    def consumed(self) -> int:
        return self._cursor

    def run_to_completion(self) -> None:
        self.advance(self.finish_clock)

    @property
    def finish_clock(self) -> float:
        raise NotImplementedError


class OracleTrainer(_CursorTrainer):
    """True final label at click time; only possible on historical data."""

    name = "oracle"

    def __init__(self, log, store, model, cfg):
        super().__init__(log, store, model, cfg)
        self._labels = _final_labels(log, store, model.kind == "logistic")

    def __len__(self) -> int:
        return len(self.log)

    def _due(self, cursor: int) -> float:
        return float(self.log.ts[cursor])

    def _train(self, cursor: int) -> None:
        self.model.sgd_step(self.log.feature(cursor), self._labels[cursor], self.cfg)

    @property
    def finish_clock(self) -> float:
        return self.log.end_ts


class ShiftedTrainer(_CursorTrainer):
    """True final label, released only after the full window has elapsed;
    the schedule is identical to a one-head multi-head model."""

    name = "shifted"

    def __init__(self, log, store, model, cfg, full_window: float):
        super().__init__(log, store, model, cfg)
        if full_window <= 0:
            raise StreamError(f"full window must be positive, got {full_window}")
        self.full_window = full_window
        self._labels = _final_labels(log, store, model.kind == "logistic")

    def __len__(self) -> int:
        return len(self.log)

    def _due(self, cursor: int) -> float:
        return float(self.log.ts[cursor]) + self.full_window

    def _train(self, cursor: int) -> None:
        self.model.sgd_step(self.log.feature(cursor), self._labels[cursor], self.cfg)

    @property
    def finish_clock(self) -> float:
        return self.log.end_ts + self.full_window


class NaiveTrainer(_CursorTrainer):
    """Every click an immediate negative, every conversion a later positive.

    A converting click therefore contributes two training events; the
    resulting model is biased by construction and serves as the paper-style
    cautionary baseline.
    """

    name = "naive"

    def __init__(self, log, store, model, cfg):
        super().__init__(log, store, model, cfg)
        logistic = model.kind == "logistic"
        events: list[tuple[float, int, int, float]] = []
        for j, click_id in enumerate(log.ids):
            events.append((float(log.ts[j]), 0, j, 0.0))
            conv = store.get(click_id)
            if conv is not None:
                pos = 1.0 if logistic else float(conv[1])
                events.append((float(log.ts[j]) + conv[0], 1, j, pos))
        events.sort()
        self._events = events
        self._max_delay = max(
            (conv[0] for _, conv in store.items()), default=0.0
        )

    def __len__(self) -> int:
        return len(self._events)

    def _due(self, cursor: int) -> float:
        return self._events[cursor][0]

    def _train(self, cursor: int) -> None:
        _, _, j, label = self._events[cursor]
        self.model.sgd_step(self.log.feature(j), label, self.cfg)

    @property
    def finish_clock(self) -> float:
        return self.log.end_ts + self._max_delay


def train_naive(log, store, model, cfg) -> GlmModel:
    trainer = NaiveTrainer(log, store, model, cfg)
    trainer.run_to_completion()
    return model


def train_shifted(log, store, model, cfg, full_window: float) -> GlmModel:
    trainer = ShiftedTrainer(log, store, model, cfg, full_window)
    trainer.run_to_completion()
    return model


def train_oracle(log, store, model, cfg) -> GlmModel:
    trainer = OracleTrainer(log, store, model, cfg)
    trainer.run_to_completion()
    return model


METHODS = ("mhol", "naive", "shifted", "oracle")


def make_trainer(method: str, log: ClickLog, store: ConversionStore,
                 windows: DelayWindows, cfg: TrainConfig, task: str,
                 hash_bits: int, intercept: bool = True,
                 on_event=None):
    """Build a ready-to-run trainer for one of the named methods.

    ``task`` picks the head kind: "cvr" trains logistic models, "vpc"
    linear ones. Baselines ignore ``windows`` except for the full window.
    """
    if task not in ("cvr", "vpc"):
        raise ValueError(f"task must be 'cvr' or 'vpc', got {task!r}")
    kind = "logistic" if task == "cvr" else "linear"
    if method == "mhol":
        mh = MultiHeadModel(windows, kind, hash_bits, intercept=intercept)
        return MholStreamTrainer(log, store, mh, cfg, on_event=on_event)
    model = GlmModel(kind, hash_bits, intercept=intercept)
    if method == "naive":
        return NaiveTrainer(log, store, model, cfg)
    if method == "shifted":
        return ShiftedTrainer(log, store, model, cfg, windows.full_window)
    if method == "oracle":
        return OracleTrainer(log, store, model, cfg)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
