"""Single-head generalized linear models trained online.

Logistic regression scores conversion probability, linear regression scores
conversion value. Both share one sparse training step: per-example loss
gradient plus L2 on the touched coordinates, pushed through bias-corrected
adaptive-moment SGD. Weights are a dense array over the hashed feature
space so updates and dots are O(nnz).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .features import SparseVector

KINDS = ("logistic", "linear")

CHECKPOINT_MAGIC = "delaylearn-glm"
CHECKPOINT_VERSION = 1


class DivergenceError(ArithmeticError):
    """A training update produced a non-finite weight; abort the run."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    """Shared optimizer hyperparameters.

    The probability clamp only guards loss computation (log of extreme
    probabilities), never the stored weights.
    """

    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 1e-6
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must be in (0, 0.5), got {self.clamp_eps}")

    def updated(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z if z < 60.0 else -60.0))
    return 1.0 - 1.0 / (1.0 + math.exp(z if z > -60.0 else -60.0))


def clamp_probability(p: float, eps: float) -> float:
    return min(max(p, eps), 1.0 - eps)


class GlmModel:
    """One GLM head: dense weights + intercept + optimizer state.

    Single-writer: exactly one trainer may call sgd_step. Reads against a
    quiesced model are safe from anywhere.
    """

    def __init__(self, kind: str, hash_bits: int, intercept: bool = True):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        if not 1 <= hash_bits <= 30:
            raise ValueError(f"hash_bits must be in [1, 30], got {hash_bits}")
        self.kind = kind
        self.hash_bits = hash_bits
        self.use_intercept = intercept
        dim = 1 << hash_bits
        self.weights = np.zeros(dim, dtype=np.float64)
        self.bias = 0.0
        self.m = np.zeros(dim, dtype=np.float64)
        self.v = np.zeros(dim, dtype=np.float64)
        self.bias_m = 0.0
        self.bias_v = 0.0
        self.step = 0

    @property
    def dim(self) -> int:
        return self.weights.size

    def raw_score(self, x: SparseVector) -> float:
        """w.x + bias, before any link function."""
        return float(self.weights[x.indices] @ x.values) + self.bias

    def predict(self, x: SparseVector) -> float:
        """Probability in (0, 1) for logistic heads, any real for linear."""
        z = self.raw_score(x)
        return sigmoid(z) if self.kind == "logistic" else z

    def loss(self, x: SparseVector, label: float, clamp_eps: float = 1e-6) -> float:
        """Per-example negative log-likelihood (logistic) or squared error."""
        z = self.raw_score(x)
        if self.kind == "logistic":
            if label not in (0, 1, 0.0, 1.0):
                raise ValueError(f"logistic label must be 0 or 1, got {label}")
            p = clamp_probability(sigmoid(z), clamp_eps)
            return -(label * math.log(p) + (1.0 - label) * math.log(1.0 - p))
        return (label - z) ** 2

    def _residual(self, z: float, label: float) -> float:
        """d(per-example loss)/d(raw score)."""
        if self.kind == "logistic":
            return sigmoid(z) - label
        return 2.0 * (z - label)

    def loss_gradient(self, x: SparseVector, label: float) -> tuple[np.ndarray, float]:
        """Analytic gradient of the per-example loss (no L2 term) with
        respect to the touched weights and the bias."""
        z = self.raw_score(x)
        residual = self._residual(z, label)
        return residual * x.values, residual

    def sgd_step(self, x: SparseVector, label: float, cfg: TrainConfig) -> None:
        """One online update on (x, label).

        Touches only the coordinates present in x (plus the intercept): the
        loss gradient gets an L2 term on those weights, then flows through
        the bias-corrected adaptive-moment rule. The step counter is global
        and increments once per call. Raises DivergenceError if any updated
        value is non-finite.
        """
        idx = x.indices
        vals = x.values
        w = self.weights
        wx = w[idx]
        z = float(wx @ vals) + self.bias
        if self.kind == "logistic":
            if label not in (0, 1, 0.0, 1.0):
                raise ValueError(f"logistic label must be 0 or 1, got {label}")
            residual = sigmoid(z) - label
        else:
            residual = 2.0 * (z - label)

        lam = cfg.l2_lambda
        g = residual * vals
        if lam:
            g += lam * wx

        t = self.step + 1
        b1 = cfg.beta1
        b2 = cfg.beta2
        inv_c1 = 1.0 / (1.0 - b1 ** t)
        inv_c2 = 1.0 / (1.0 - b2 ** t)
        lr = cfg.learning_rate
        eps = cfg.epsilon

        m_new = b1 * self.m[idx] + (1.0 - b1) * g
        v_new = b2 * self.v[idx] + (1.0 - b2) * (g * g)
        w_new = wx - lr * (m_new * inv_c1) / (np.sqrt(v_new * inv_c2) + eps)

        if self.use_intercept:
            gb = residual  # intercept carries no L2
            bm = b1 * self.bias_m + (1.0 - b1) * gb
            bv = b2 * self.bias_v + (1.0 - b2) * (gb * gb)
            b_new = self.bias - lr * (bm * inv_c1) / (math.sqrt(bv * inv_c2) + eps)
        else:
            bm = self.bias_m
            bv = self.bias_v
            b_new = self.bias

        if not (np.isfinite(w_new).all() and math.isfinite(b_new)):
            raise DivergenceError(
                f"non-finite parameter after step {t}; reduce the learning "
                "rate or inspect the input stream"
            )

        self.m[idx] = m_new
        self.v[idx] = v_new
        w[idx] = w_new
        self.bias_m = bm
        self.bias_v = bv
        self.bias = b_new
        self.step = t

    # --- checkpointing ---------------------------------------------------

    def save(self, path) -> None:
        """Write a version-1 text checkpoint.

        Layout: a magic+version line, ``key=value`` header lines, an
        ``entries`` marker, then one ``index weight m v`` line per
        coordinate where any of (weight, m, v) is nonzero. Floats are
        shortest-roundtrip decimals, so restore is bit-exact.
        """
        nz = np.flatnonzero((self.weights != 0.0) | (self.m != 0.0) | (self.v != 0.0))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
            fh.write(f"kind={self.kind}\n")
            fh.write(f"hash_bits={self.hash_bits}\n")
            fh.write(f"intercept={int(self.use_intercept)}\n")
            fh.write(f"step={self.step}\n")
            fh.write(f"bias={self.bias!r}\n")
            fh.write(f"bias_m={self.bias_m!r}\n")
            fh.write(f"bias_v={self.bias_v!r}\n")
            fh.write(f"entries={nz.size}\n")
            w = self.weights
            m = self.m
            v = self.v
            for i in nz:
                fh.write(f"{i} {w[i]!r} {m[i]!r} {v[i]!r}\n")

    @classmethod
    def load(cls, path) -> "GlmModel":
        with open(path, "r", encoding="utf-8") as fh:
            magic = fh.readline().strip()
            if magic != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
                raise CheckpointError(f"bad checkpoint header {magic!r}")
            header: dict[str, str] = {}
            for _ in range(8):
                key, sep, val = fh.readline().strip().partition("=")
                if not sep:
                    raise CheckpointError("truncated checkpoint header")
                header[key] = val
            try:
                model = cls(
                    header["kind"],
                    int(header["hash_bits"]),
                    intercept=bool(int(header["intercept"])),
                )
                model.step = int(header["step"])
                model.bias = float(header["bias"])
                model.bias_m = float(header["bias_m"])
                model.bias_v = float(header["bias_v"])
                n_entries = int(header["entries"])
            except (KeyError, ValueError) as exc:
                raise CheckpointError(f"bad checkpoint header field: {exc}") from exc
            for k in range(n_entries):
                parts = fh.readline().split()
                if len(parts) != 4:
                    raise CheckpointError(f"bad checkpoint entry on row {k}")
                i = int(parts[0])
                if not 0 <= i < model.dim:
                    raise CheckpointError(f"entry index {i} out of range")
                model.weights[i] = float(parts[1])
                model.m[i] = float(parts[2])
                model.v[i] = float(parts[3])
        return model

    def copy(self) -> "GlmModel":
        out = GlmModel(self.kind, self.hash_bits, intercept=self.use_intercept)
        out.weights = self.weights.copy()
        out.m = self.m.copy()
        out.v = self.v.copy()
        out.bias = self.bias
        out.bias_m = self.bias_m
        out.bias_v = self.bias_v
        out.step = self.step
        return out

    def state_equal(self, other: "GlmModel") -> bool:
        """Bitwise equality of every parameter and optimizer accumulator."""
        return (
            self.kind == other.kind
            and self.hash_bits == other.hash_bits
            and self.use_intercept == other.use_intercept
            and self.step == other.step
            and self.bias == other.bias
            and self.bias_m == other.bias_m
            and self.bias_v == other.bias_v
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.v, other.v)
        )
