"""Per-window sub-models and their combined CVR/VPC prediction.

One GLM head per delay window, all sharing kind, dimensionality and
hyperparameters. Every click is a training example for every head; the
head owning the click's conversion window sees the positive label, every
other head sees zero. The overall prediction is simply the sum of head
outputs: summed sigmoids for CVR (which may exceed 1 and is clamped for
loss metrics), summed linear scores for VPC (equivalently one merged
weight vector).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .features import SparseVector
from .glm import GlmModel, TrainConfig, clamp_probability, sigmoid
from .windows import DelayWindows, QuantizedLabels

MANIFEST_NAME = "multihead.json"
MANIFEST_VERSION = 1


def compose_vpc(cvr: float, cv: float) -> float:
    """Value per click from a conversion rate and a mean conversion value,
    assuming the two are independent."""
    if not 0.0 <= cvr <= 1.0:
        raise ValueError(f"cvr must be in [0, 1], got {cvr}")
    if cv < 0:
        raise ValueError(f"cv must be >= 0, got {cv}")
    return cvr * cv


class MultiHeadModel:
    """n delay windows, n single-writer GLM heads, one combined output."""

    def __init__(self, windows: DelayWindows, kind: str, hash_bits: int,
                 intercept: bool = True, combine_clamp: bool = True,
                 clamp_eps: float = 1e-6, vpc_floor: bool = False):
        self.windows = windows
        self.heads = [
            GlmModel(kind, hash_bits, intercept=intercept)
            for _ in range(windows.n_heads)
        ]
        self.combine_clamp = combine_clamp
        self.clamp_eps = clamp_eps
        self.vpc_floor = vpc_floor

    @property
    def kind(self) -> str:
        return self.heads[0].kind

    @property
    def hash_bits(self) -> int:
        return self.heads[0].hash_bits

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def train_example(self, head_index: int, x: SparseVector,
                      labels: QuantizedLabels, cfg: TrainConfig) -> None:
        """Update exactly one head with its per-window label.

        ``labels`` must come from quantize() under this model's windows; a
        click converting in window j is a positive for head j and a negative
        (or zero-value) example for every other head.
        """
        if not 0 <= head_index < self.n_heads:
            raise IndexError(
                f"head_index {head_index} out of range [0, {self.n_heads})"
            )
        if len(labels.y_i) != self.n_heads:
            raise ValueError(
                f"labels quantized for {len(labels.y_i)} heads, model has "
                f"{self.n_heads}"
            )
        if self.kind == "logistic":
            label = float(labels.y_i[head_index])
        else:
            label = float(labels.v_i[head_index])
        self.heads[head_index].sgd_step(x, label, cfg)

    def predict_cvr_raw(self, x: SparseVector) -> float:
        """Sum of head sigmoids. Not inherently <= 1."""
        if self.kind != "logistic":
            raise ValueError("predict_cvr needs logistic heads")
        return sum(sigmoid(h.raw_score(x)) for h in self.heads)

    def predict_cvr(self, x: SparseVector) -> float:
        """Combined CVR, clamped into (0, 1) when combine_clamp is set so it
        is safe inside log-loss metrics."""
        raw = self.predict_cvr_raw(x)
        if self.combine_clamp:
            return clamp_probability(raw, self.clamp_eps)
        return raw

    def predict_vpc(self, x: SparseVector) -> float:
        """Sum of head linear scores; optionally floored at zero for
        serving (raw sums can go negative)."""
        if self.kind != "linear":
            raise ValueError("predict_vpc needs linear heads")
        out = sum(h.raw_score(x) for h in self.heads)
        if self.vpc_floor:
            return max(out, 0.0)
        return out

    def merged_vpc_model(self) -> GlmModel:
        """Single linear model equivalent to the summed heads: weights and
        intercepts added coordinate-wise. Handy for serving one vector."""
        if self.kind != "linear":
            raise ValueError("merged model is defined for linear heads")
        merged = GlmModel("linear", self.hash_bits,
                          intercept=self.heads[0].use_intercept)
        for h in self.heads:
            merged.weights += h.weights
            merged.bias += h.bias
        return merged

    def state_equal(self, other: "MultiHeadModel") -> bool:
        return (
            self.windows == other.windows
            and self.n_heads == other.n_heads
            and all(a.state_equal(b) for a, b in zip(self.heads, other.heads))
        )

    # --- checkpointing ---------------------------------------------------

    def save(self, directory) -> None:
        """Checkpoint = manifest + one single-model checkpoint per head."""
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "format": MANIFEST_NAME,
            "version": MANIFEST_VERSION,
            "kind": self.kind,
            "hash_bits": self.hash_bits,
            "intercept": self.heads[0].use_intercept,
            "boundaries": list(self.windows.boundaries),
            "combine_clamp": self.combine_clamp,
            "clamp_eps": self.clamp_eps,
            "vpc_floor": self.vpc_floor,
            "heads": [f"head_{i:02d}.ckpt" for i in range(self.n_heads)],
        }
        with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for i, head in enumerate(self.heads):
            head.save(os.path.join(directory, manifest["heads"][i]))

    @classmethod
    def load(cls, directory) -> "MultiHeadModel":
        with open(os.path.join(directory, MANIFEST_NAME), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("format") != MANIFEST_NAME or manifest.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported multi-head checkpoint in {directory}")
        model = cls(
            DelayWindows(tuple(manifest["boundaries"])),
            manifest["kind"],
            manifest["hash_bits"],
            intercept=manifest["intercept"],
            combine_clamp=manifest["combine_clamp"],
            clamp_eps=manifest["clamp_eps"],
            vpc_floor=manifest["vpc_floor"],
        )
        model.heads = [
            GlmModel.load(os.path.join(directory, name))
            for name in manifest["heads"]
        ]
        return model
