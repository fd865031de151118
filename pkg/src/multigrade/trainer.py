"""Grade-wise gradient training and the end-to-end baseline.

The practical counterpart of the constructive pipeline: nets are trained one
grade at a time on the residual of everything before, with earlier blocks
frozen as fixed feature maps, against a fully connected baseline of the same
total depth, width and epoch budget.  Forward, backward and Adam are
hand-rolled in numpy and run in binary64 so gradients can be checked against
central finite differences to tight tolerances.

Everything is deterministic given the config seed: parameter draws, batch
shuffling and evaluation order all come from one generator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .targets import TargetFunction

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Layer:
    """One affine map with an activation tag ("relu" or "linear")."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def apply(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weights.T + self.bias
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.activation)


def init_layer(rng, n_out: int, n_in: int, activation: str = "relu",
               zero: bool = False) -> Layer:
    """Uniform U(-sqrt(k), sqrt(k)) with k = 1/fan_in on weights and biases.

    Output maps are zero-initialized instead: a new grade then starts from
    the identity correction, so its initial objective equals the previous
    grade's final residual loss exactly.
    """
    if zero:
        return Layer(np.zeros((n_out, n_in)), np.zeros(n_out), activation)
    bound = np.sqrt(1.0 / n_in)
    return Layer(rng.uniform(-bound, bound, (n_out, n_in)),
                 rng.uniform(-bound, bound, n_out), activation)


def forward_stack(layers, x: np.ndarray):
    """All activations through ``layers``; acts[0] is the input."""
    acts = [x]
    for layer in layers:
        acts.append(layer.apply(acts[-1]))
    return acts


def mse_loss_and_grads(layers, x: np.ndarray, y: np.ndarray):
    """Mean-squared-error loss and gradients for every layer parameter.

    ``x`` may be precomputed features from a frozen prefix; gradients are
    returned per layer as (dW, db) in layer order.
    """
    acts = forward_stack(layers, x)
    pred = acts[-1]
    diff = pred - y
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if layer.activation == "relu":
            g = g * (acts[i + 1] > 0)
        grads.append((g.T @ acts[i], g.sum(axis=0)))
        g = g @ layer.weights
    grads.reverse()
    return loss, grads


class Adam:
    def __init__(self, layers, lr0: float, decay_step: int):
        self.lr0 = lr0
        self.decay_step = decay_step
        self.t = 0
        self.state = [(np.zeros_like(l.weights), np.zeros_like(l.bias),
                       np.zeros_like(l.weights), np.zeros_like(l.bias))
                      for l in layers]

    def lr(self, epoch: int) -> float:
        return self.lr0 * 0.9 ** (epoch // self.decay_step)

    def step(self, layers, grads, epoch: int) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        lr = self.lr(epoch)
        for layer, (dw, db), (mw, mb, vw, vb) in zip(layers, grads, self.state):
            mw *= ADAM_BETA1
            mw += (1 - ADAM_BETA1) * dw
            mb *= ADAM_BETA1
            mb += (1 - ADAM_BETA1) * db
            vw *= ADAM_BETA2
            vw += (1 - ADAM_BETA2) * dw * dw
            vb *= ADAM_BETA2
            vb += (1 - ADAM_BETA2) * db * db
            layer.weights -= lr * (mw / c1) / (np.sqrt(vw / c2) + ADAM_EPS)
            layer.bias -= lr * (mb / c1) / (np.sqrt(vb / c2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


def make_dataset(target: TargetFunction, n: int, sampling: str = "uniform",
                 seed: int = 0) -> Dataset:
    """Sample (x, f(x)) pairs; deterministic given the seed."""
    if n <= 0:
        raise ValueError("need at least one sample")
    if sampling == "uniform":
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.0, 1.0, (n, target.dim))
    elif sampling == "grid":
        m = round(n ** (1.0 / target.dim))
        if m ** target.dim != n:
            raise ValueError(f"grid sampling needs n = m^d, got n={n}, d={target.dim}")
        ax = np.arange(m) / (m - 1)
        mesh = np.meshgrid(*([ax] * target.dim), indexing="ij")
        x = np.stack([a.reshape(-1) for a in mesh], axis=-1)
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    return Dataset(x=x, y=target.evaluate(x)[:, None])


# ---------------------------------------------------------------------------
# configuration and traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    grades: int = 4
    width: int = 32
    epochs_per_grade: tuple = (125, 250, 500, 1125)
    batch_size: int = 400
    lr0: float = 3e-3
    lr_step: int = 120          # eta_k = lr0 * 0.9^(k // lr_step), per grade
    fcnn_lr_step: int = 200
    block_depth: int = 2        # hidden layers per grade block
    seed: int = 0

    def __post_init__(self):
        if self.grades < 1:
            raise ValueError("need at least one grade")
        if len(self.epochs_per_grade) != self.grades:
            raise ValueError("epochs_per_grade length must equal grades")
        if any(e < 0 for e in self.epochs_per_grade):
            raise ValueError("epoch counts must be nonnegative")

    @property
    def total_epochs(self) -> int:
        return sum(self.epochs_per_grade)

    def with_grades(self, grades: int, total_epochs: Optional[int] = None) -> "TrainConfig":
        total = total_epochs if total_epochs is not None else self.total_epochs
        fracs = np.array([2.0 ** g for g in range(grades)])
        fracs /= fracs.sum()
        epochs = [int(total * f) for f in fracs]
        epochs[-1] = total - sum(epochs[:-1])
        return replace(self, grades=grades, epochs_per_grade=tuple(epochs))


@dataclass
class EpochRecord:
    epoch: int
    grade: int
    train_mse: float
    test_mse: float
    test_max: float


@dataclass
class TrainTrace:
    per_epoch: list = field(default_factory=list)
    grade_boundaries: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "grade", "train_mse", "test_mse", "test_max"])
            for rec in self.per_epoch:
                w.writerow([rec.epoch, rec.grade, f"{rec.train_mse:.17g}",
                            f"{rec.test_mse:.17g}", f"{rec.test_max:.17g}"])

    def grade_slices(self):
        """Per-grade index ranges into per_epoch."""
        out = []
        start = 0
        for end in self.grade_boundaries:
            out.append((start, end))
            start = end
        return out


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass
class MgdlModel:
    """Grade blocks T_1..T_M (frozen after training) and output maps g_m.

    predict(x) = sum_m g_m(T_m(...T_1(x))).
    """

    blocks: list
    outputs: list
    dim: int

    def features(self, x: np.ndarray, upto: int) -> np.ndarray:
        h = x
        for block in self.blocks[:upto]:
            for layer in block:
                h = layer.apply(h)
        return h

    def predict(self, x: np.ndarray, upto: Optional[int] = None) -> np.ndarray:
        upto = len(self.blocks) if upto is None else upto
        h = x
        out = np.zeros((len(x), 1))
        for m in range(upto):
            for layer in self.blocks[m]:
                h = layer.apply(h)
            out += self.outputs[m].apply(h)
        return out

    def checksum(self, upto: int) -> bytes:
        """Bit-exact digest of the first ``upto`` blocks (freezing contract)."""
        import hashlib

        digest = hashlib.sha256()
        for block in self.blocks[:upto]:
            for layer in block:
                digest.update(np.ascontiguousarray(layer.weights).tobytes())
                digest.update(np.ascontiguousarray(layer.bias).tobytes())
        return digest.digest()


@dataclass
class FcnnModel:
    layers: list
    dim: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward_stack(self.layers, x)[-1]


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _metrics(pred_tr, y_tr, pred_te, y_te):
    tr = float(np.mean((pred_tr - y_tr) ** 2))
    te = float(np.mean((pred_te - y_te) ** 2))
    tmax = float(np.abs(pred_te - y_te).max())
    return tr, te, tmax


def _train_block(trainable, feats, resid, feats_te, resid_te, epochs, cfg, rng,
                 trace, grade, epoch_offset, lr_step):
    """Adam on the MSE of ``trainable`` applied to frozen features."""
    n = len(feats)
    opt = Adam(trainable, cfg.lr0, lr_step)
    for ep in range(epochs):
        perm = rng.permutation(n)
        for i0 in range(0, n, cfg.batch_size):
            idx = perm[i0:i0 + cfg.batch_size]
            loss, grads = mse_loss_and_grads(trainable, feats[idx], resid[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"NaN/inf loss at grade {grade}, epoch {ep}")
            opt.step(trainable, grads, ep)
        tr, te, tmax = _metrics(forward_stack(trainable, feats)[-1], resid,
                                forward_stack(trainable, feats_te)[-1], resid_te)
        trace.per_epoch.append(EpochRecord(epoch_offset + ep, grade, tr, te, tmax))


def mgdl_train(train: Dataset, test: Dataset, cfg: TrainConfig):
    """Grade-wise training: new block + output map per grade, rest frozen.

    Residual targets are updated incrementally: at grade m the targets are
    y minus the summed outputs of grades < m, and the transformed inputs are
    the frozen feature stack applied to x.
    """
    rng = np.random.default_rng(cfg.seed)
    trace = TrainTrace()
    model = MgdlModel(blocks=[], outputs=[], dim=train.x.shape[1])
    feats, feats_te = train.x, test.x
    resid, resid_te = train.y.copy(), test.y.copy()
    epoch_offset = 0
    for grade in range(1, cfg.grades + 1):
        n_in = feats.shape[1]
        block = [init_layer(rng, cfg.width, n_in)]
        for _ in range(cfg.block_depth - 1):
            block.append(init_layer(rng, cfg.width, cfg.width))
        out = init_layer(rng, train.y.shape[1], cfg.width, activation="linear",
                         zero=True)
        trainable = block + [out]
        _train_block(trainable, feats, resid, feats_te, resid_te,
                     cfg.epochs_per_grade[grade - 1], cfg, rng, trace, grade,
                     epoch_offset, cfg.lr_step)
        epoch_offset += cfg.epochs_per_grade[grade - 1]
        trace.grade_boundaries.append(len(trace.per_epoch))
        # freeze: advance features and residuals through the finished grade
        acts = forward_stack(trainable, feats)
        acts_te = forward_stack(trainable, feats_te)
        resid = resid - acts[-1]
        resid_te = resid_te - acts_te[-1]
        feats, feats_te = acts[-2], acts_te[-2]
        model.blocks.append(block)
        model.outputs.append(out)
    return model, trace


def fcnn_train(train: Dataset, test: Dataset, cfg: TrainConfig):
    """End-to-end baseline: same total depth, width and epoch budget."""
    rng = np.random.default_rng(cfg.seed)
    trace = TrainTrace()
    layers = []
    n_in = train.x.shape[1]
    for _ in range(cfg.grades * cfg.block_depth):
        layers.append(init_layer(rng, cfg.width, n_in))
        n_in = cfg.width
    layers.append(init_layer(rng, train.y.shape[1], cfg.width,
                             activation="linear", zero=True))
    model = FcnnModel(layers=layers, dim=train.x.shape[1])
    total = cfg.total_epochs
    if total == 0:
        tr, te, tmax = _metrics(model.predict(train.x), train.y,
                                model.predict(test.x), test.y)
        trace.per_epoch.append(EpochRecord(0, 1, tr, te, tmax))
        return model, trace
    _train_block(layers, train.x, train.y, test.x, test.y, total, cfg, rng,
                 trace, 1, 0, cfg.fcnn_lr_step)
    return model, trace


# ---------------------------------------------------------------------------
# model export (interchange layout plus a trained marker)
# ---------------------------------------------------------------------------

def _enc(a: np.ndarray):
    if a.ndim == 1:
        return [f"{v:.17g}" for v in a]
    return [[f"{v:.17g}" for v in row] for row in a]


def export_trained_model(model: MgdlModel, path) -> None:
    """Write the network interchange layout with ``trained: true``.

    Hidden affines of grade m act on the previous grade's feature output
    (the chained view), unlike constructive grades which carry the input.
    """
    grades = []
    for block, out in zip(model.blocks, model.outputs):
        grades.append({
            "hidden": [{"weights": _enc(l.weights), "bias": _enc(l.bias)}
                       for l in block],
            "output": {"weights": _enc(out.weights), "bias": _enc(out.bias)},
        })
    payload = {"dim": model.dim, "r": None, "trained": True, "grades": grades,
               "round_boundaries": list(range(1, len(grades) + 1))}
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_trained_model(path) -> MgdlModel:
    with open(path) as fh:
        data = json.load(fh)
    if not data.get("trained"):
        raise ValueError("not a trained-model file")
    blocks, outputs = [], []
    for g in data["grades"]:
        blocks.append([Layer(np.array(l["weights"], dtype=float),
                             np.array(l["bias"], dtype=float), "relu")
                       for l in g["hidden"]])
        outputs.append(Layer(np.array(g["output"]["weights"], dtype=float),
                             np.array(g["output"]["bias"], dtype=float), "linear"))
    return MgdlModel(blocks=blocks, outputs=outputs, dim=int(data["dim"]))
