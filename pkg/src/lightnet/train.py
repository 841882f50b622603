"""Two desk-scale demo tasks: a causal byte-level LM and a 2-D grid classifier.

Both log the loss on a fixed evaluation batch every ``log_every`` steps
(step 0 is before any update) plus once more after the last step, so 500
steps with the default interval give 51 rows.

The grid task: 8 x 8 cells, each with 4 channels (background noise, pattern
indicator, origin marker, constant 1). A 2 x 2 pattern sits entirely inside
one quadrant and the label is that quadrant. Every class has the same
multiset of cell values, so a model that cannot see positions is at chance.
The origin marker gives relative encodings something to measure against:
without it the grid is symmetric under reflections, which relative
rotations cannot tell apart.
"""

from __future__ import annotations

import csv
import io
import math
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lightnet.model import LightNetModel, ModelConfig, build_model
from lightnet.numerics import Rng, Tape, ops
from lightnet.optim import Adam

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

MIN_CORPUS_BYTES = 10_000
GRID = (8, 8)
GRID_CHANNELS = 4
PATTERN = 2


class TrainingError(FloatingPointError):
    pass


@dataclass
class TrainReport:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    accuracy: float | None = None
    model: LightNetModel | None = None
    optimizer: Adam | None = None

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss

    def to_csv(self, path=None) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "loss", "wall_ms"))
        for s, l, t in zip(self.steps, self.losses, self.wall_ms):
            w.writerow((s, repr(float(l)), f"{t:.3f}"))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _threads(n: int | None):
    if n is None or threadpool_limits is None:
        return nullcontext()
    if n < 1:
        raise ValueError("threads must be positive")
    return threadpool_limits(limits=n)


def _check_finite(step: int, loss: float, grads: dict) -> None:
    if math.isfinite(loss) and all(np.all(np.isfinite(g.data)) for g in grads.values()):
        return
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g.data))]
    raise TrainingError(f"non-finite loss or gradient at step {step}: loss={loss}, non-finite gradients in {bad[:5]}")


def _fit(model: LightNetModel, opt: Adam, steps: int, batch_fn, loss_fn, eval_fn, log_every: int) -> TrainReport:
    report = TrainReport()
    t0 = time.perf_counter()

    def log(step):
        report.steps.append(step)
        report.losses.append(eval_fn(model))
        report.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if not math.isfinite(report.losses[-1]):
            raise TrainingError(f"non-finite evaluation loss at step {step}: {report.losses[-1]}")

    for step in range(steps):
        if step % log_every == 0:
            log(step)
        xb, yb = batch_fn(step)
        names = list(model.params)
        params = model.params
        with Tape() as tape:
            tape.watch(*params.values())
            loss = loss_fn(model, params, xb, yb)
        grads = dict(zip(names, tape.gradient(loss, [params[k] for k in names])))
        _check_finite(step + 1, loss.item(), grads)
        model = model.with_params(opt.step(params, grads))
    log(steps)
    report.model, report.optimizer = model, opt
    return report


# ---------------------------------------------------------------------------
# character-level LM
# ---------------------------------------------------------------------------


def load_corpus(path, min_bytes: int = MIN_CORPUS_BYTES) -> np.ndarray:
    """Corpus bytes as uint8 tokens; must be valid UTF-8 and at least ``min_bytes`` long."""
    raw = Path(path).read_bytes()
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueError(f"corpus {path} is not valid UTF-8: {exc}") from exc
    if len(raw) < min_bytes:
        raise ValueError(f"corpus {path} has {len(raw)} bytes, need at least {min_bytes}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def synthetic_corpus(n_bytes: int = 100_000, seed: int = 0) -> str:
    """Deterministic pseudo-English text of exactly ``n_bytes`` ASCII bytes.

    Words are built from a fixed syllable set with Zipf-like frequencies and
    a first-order word chain, so the text has byte-, word- and
    sentence-level structure for a small LM to pick up.
    """
    rng = Rng(seed)
    syll = ["ka", "lo", "mi", "ne", "ta", "ri", "so", "ve", "du", "pa", "the", "and", "ing", "er", "on", "st"]
    words = sorted({"".join(syll[i] for i in rng.integers(0, len(syll), int(rng.integers(1, 4)))) for _ in range(300)})
    v = len(words)
    zipf = 1.0 / np.arange(1, v + 1)
    follow = rng.integers(0, v, (v, 3))
    out, size, prev, in_sentence = [], 0, 0, 0
    while size < n_bytes:
        if rng.uniform(1)[0] < 0.6:
            prev = int(follow[prev, rng.integers(0, 3)])
        else:
            prev = int(rng.choice(v, p=zipf / zipf.sum()))
        w = words[prev]
        if in_sentence == 0:
            w = w.capitalize()
        in_sentence += 1
        end = in_sentence > 4 and rng.uniform(1)[0] < 0.2
        piece = w + (".\n" if end and rng.uniform(1)[0] < 0.3 else ". " if end else " ")
        if end:
            in_sentence = 0
        out.append(piece)
        size += len(piece)
    return "".join(out)[:n_bytes]


def char_lm_config(**overrides) -> ModelConfig:
    base = dict(vocab=256, d=64, layers=2, heads=2, tpe_modes=4, causal=True, lrpe=True, tpe=True)
    base.update(overrides)
    return ModelConfig(**base)


def _windows(tokens: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    return tokens[starts[:, None] + np.arange(length + 1)[None, :]]


def lm_loss(model: LightNetModel, params, x, y):
    return ops.cross_entropy(model.forward(x, params), y)


def train_char_lm(
    cfg: ModelConfig,
    corpus,
    steps: int = 500,
    lr: float = 3e-4,
    batch: int = 16,
    seq_len: int = 64,
    warmup: int | None = None,
    log_every: int = 10,
    threads: int | None = None,
    min_bytes: int = MIN_CORPUS_BYTES,
) -> TrainReport:
    """Next-byte cross-entropy with Adam; ``corpus`` is a path or a token array."""
    if not cfg.causal or cfg.vocab != 256 or cfg.classes:
        raise ValueError("char-LM needs a causal model over a 256-byte vocabulary")
    tokens = load_corpus(corpus, min_bytes) if isinstance(corpus, (str, Path)) else np.asarray(corpus, dtype=np.int64)
    if tokens.size < seq_len + 2:
        raise ValueError(f"corpus of {tokens.size} tokens is shorter than one training window")
    rng = Rng(cfg.seed)
    data_rng, eval_rng = rng.fork("batches"), rng.fork("eval")
    hi = tokens.size - seq_len - 1
    ev = _windows(tokens, eval_rng.integers(0, hi + 1, batch), seq_len)

    def batch_fn(step):
        w = _windows(tokens, data_rng.integers(0, hi + 1, batch), seq_len)
        return w[:, :-1], w[:, 1:]

    def eval_fn(model):
        return float(ops.cross_entropy(model.forward(ev[:, :-1]), ev[:, 1:]).item())

    warm = min(50, steps // 10) if warmup is None else warmup
    with _threads(threads):
        model = build_model(cfg)
        return _fit(model, Adam(lr, warmup=warm), steps, batch_fn, lm_loss, eval_fn, log_every)


# ---------------------------------------------------------------------------
# 2-D grid classification
# ---------------------------------------------------------------------------


def grid2d_config(tpe: bool = True, lrpe: bool = True, **overrides) -> ModelConfig:
    base = dict(vocab=0, in_channels=GRID_CHANNELS, classes=4, d=64, layers=2, heads=2, tpe_modes=4,
                grid=GRID, causal=False, lrpe=lrpe, tpe=tpe)
    base.update(overrides)
    return ModelConfig(**base)


def make_grid_batch(rng: Rng, batch: int, shuffle_labels: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``x`` [batch, 64, 4] and quadrant labels in {0, 1, 2, 3} (row-major quadrant order)."""
    rows, cols = GRID
    half_r, half_c = rows // 2, cols // 2
    labels = rng.integers(0, 4, batch)
    x = np.zeros((batch, rows, cols, GRID_CHANNELS))
    x[..., 0] = rng.uniform((batch, rows, cols), -1.0, 1.0)
    x[:, 0, 0, 2] = 1.0
    x[..., 3] = 1.0
    r0 = (labels // 2) * half_r + rng.integers(0, half_r - PATTERN + 1, batch)
    c0 = (labels % 2) * half_c + rng.integers(0, half_c - PATTERN + 1, batch)
    for dr in range(PATTERN):
        for dc in range(PATTERN):
            x[np.arange(batch), r0 + dr, c0 + dc, 0] = 0.0
            x[np.arange(batch), r0 + dr, c0 + dc, 1] = 1.0
    if shuffle_labels:
        labels = labels[rng.permutation(batch)]
    return x.reshape(batch, rows * cols, GRID_CHANNELS), labels


def accuracy(model: LightNetModel, x, y) -> float:
    return float(np.mean(np.argmax(model.forward(x).data, axis=-1) == y))


def train_grid2d(
    cfg: ModelConfig,
    steps: int = 2000,
    lr: float = 3e-3,
    batch: int = 32,
    eval_size: int = 1000,
    loss_size: int = 256,
    warmup: int | None = None,
    log_every: int = 10,
    shuffle_labels: bool = False,
    threads: int | None = None,
) -> TrainReport:
    """Quadrant classification on fresh synthetic batches.

    Logged losses use the first ``loss_size`` held-out samples; the final
    accuracy uses all ``eval_size``.
    """
    if cfg.causal or cfg.classes != 4 or tuple(cfg.grid) != GRID or cfg.in_channels != GRID_CHANNELS:
        raise ValueError(f"grid task needs a non-causal 4-class model on a {GRID} grid with {GRID_CHANNELS} channels")
    rng = Rng(cfg.seed)
    data_rng = rng.fork("batches")
    ex, ey = make_grid_batch(rng.fork("eval"), eval_size, shuffle_labels)
    lx, ly = ex[:loss_size], ey[:loss_size]

    def batch_fn(step):
        return make_grid_batch(data_rng, batch, shuffle_labels)

    def eval_fn(model):
        return float(ops.cross_entropy(model.forward(lx), ly).item())

    warm = min(100, steps // 10) if warmup is None else warmup
    with _threads(threads):
        model = build_model(cfg)
        report = _fit(model, Adam(lr, warmup=warm), steps, batch_fn, lm_loss, eval_fn, log_every)
        report.accuracy = accuracy(report.model, ex, ey)
    return report


__all__ = [
    "TrainReport",
    "TrainingError",
    "accuracy",
    "char_lm_config",
    "grid2d_config",
    "load_corpus",
    "make_grid_batch",
    "synthetic_corpus",
    "train_char_lm",
    "train_grid2d",
]
