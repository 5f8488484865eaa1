"""Optimizer, schedules and the epoch loop.

The update rule is decoupled-weight-decay Adam with a triangular cyclic
learning rate. Mini-batches of 32 are assembled by gradient accumulation:
each micro-batch loss is scaled by 1/accumulation_steps and backpropagated,
and the optimizer steps once per window, which makes the accumulated update
equal a single large-batch step. Weight snapshots are averaged every epoch
from a warmup epoch on (stochastic weight averaging); group normalization
carries no batch statistics, so the averaged weights need no re-estimation
pass. Training stops when the validation loss rises ten epochs in a row,
and the checkpoint with the best validation accuracy is kept along the way.
"""

import csv
import dataclasses
import pathlib

import numpy as np

from . import tensor as T
from .data import CLASS_NT, CLASS_T, child_seed, clip_batch
from .errors import ContractError, ParamError, TrainingAbort
from .losses import build_loss
from .model import MultiPathNet, save_checkpoint
from .tensor import no_grad


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Decay is applied directly to the pre-update parameters, scaled by the
    current learning rate, independently of the gradient-based update.
    """

    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), epsilon=1e-8,
                 weight_decay=0.01):
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ParamError(f"moment decays must lie in [0, 1), got {betas}")
        if lr <= 0 or epsilon <= 0 or weight_decay < 0:
            raise ParamError("need lr > 0, epsilon > 0, weight_decay >= 0")
        self.params = [(name, p) for name, p in named_params]
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.epsilon = float(epsilon)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grads(self):
        for _, p in self.params:
            p.grad = None

    def step(self, lr_now=None):
        """One parameter update from the currently accumulated gradients."""
        lr = self.lr if lr_now is None else float(lr_now)
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {p.data.shape}")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            decay = lr * self.weight_decay * p.data if self.weight_decay else 0.0
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.epsilon) - decay


@dataclasses.dataclass(frozen=True)
class CyclicSchedule:
    """Triangular learning-rate wave over optimizer steps."""

    base_lr: float = 1e-5
    max_lr: float = 1e-4
    half_period_steps: int = 1
    mode: str = "triangular"

    def __post_init__(self):
        if not self.base_lr < self.max_lr:
            raise ParamError(f"need base_lr < max_lr, got {self.base_lr} >= {self.max_lr}")
        if self.half_period_steps < 1:
            raise ParamError(f"half_period_steps must be >= 1, got {self.half_period_steps}")
        if self.mode != "triangular":
            raise ParamError(f"only the triangular mode exists, got {self.mode!r}")

    def lr_at(self, step):
        if step < 0:
            raise ParamError(f"step must be >= 0, got {step}")
        pos = step % (2 * self.half_period_steps)
        span = self.max_lr - self.base_lr
        if pos <= self.half_period_steps:
            return self.base_lr + span * (pos / self.half_period_steps)
        return self.max_lr - span * ((pos - self.half_period_steps) / self.half_period_steps)


@dataclasses.dataclass(frozen=True)
class AccumulationConfig:
    """Micro-batch size times accumulation steps = effective batch."""

    micro_batch: int = 4
    accumulation_steps: int = 8

    def __post_init__(self):
        if self.micro_batch < 1 or self.accumulation_steps < 1:
            raise ParamError("micro_batch and accumulation_steps must be positive")

    @property
    def effective_batch(self):
        return self.micro_batch * self.accumulation_steps


class SWAState:
    """Running arithmetic mean of parameter snapshots.

    Sums are kept in float64 so the finalized average is exactly the mean
    of the included snapshots recomputed offline in the same precision.
    """

    def __init__(self, start_epoch=5):
        self.start_epoch = int(start_epoch)
        self.count = 0
        self._sums = None

    def update(self, state_dict, epoch):
        if epoch < self.start_epoch:
            return False
        if self._sums is None:
            self._sums = {name: np.zeros(arr.shape, dtype=np.float64)
                          for name, arr in state_dict.items()}
        for name, arr in state_dict.items():
            self._sums[name] += arr.astype(np.float64)
        self.count += 1
        return True

    def average(self):
        if self.count == 0:
            raise ContractError("no snapshots were averaged")
        return {name: (s / self.count).astype(np.float32) for name, s in self._sums.items()}


class EarlyStopState:
    """Patience counter on consecutive validation-loss increases.

    The counter compares each epoch's loss with the immediately preceding
    one and resets on any non-increase. Separately, the best validation
    accuracy seen so far decides when a checkpoint is worth keeping.
    """

    def __init__(self, patience=10):
        if patience < 1:
            raise ParamError(f"patience must be >= 1, got {patience}")
        self.patience = int(patience)
        self.counter = 0
        self.prev_loss = None
        self.best_accuracy = -1.0
        self.best_epoch = None

    def observe(self, val_loss, val_accuracy, epoch):
        """Returns (stop, is_best) for this epoch's validation numbers."""
        if self.prev_loss is not None and val_loss > self.prev_loss:
            self.counter += 1
        else:
            self.counter = 0
        self.prev_loss = float(val_loss)
        is_best = val_accuracy > self.best_accuracy
        if is_best:
            self.best_accuracy = float(val_accuracy)
            self.best_epoch = int(epoch)
        return self.counter >= self.patience, is_best


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Everything the epoch loop needs besides the model and the data."""

    max_epochs: int = 100
    micro_batch: int = 4
    accumulation_steps: int = 8
    base_lr: float = 1e-5
    max_lr: float = 1e-4
    half_period_epochs: int = 4
    weight_decay: float = 0.01
    patience: int = 10
    swa_start_epoch: int = 5
    clip_len: int = 64
    sample_strategy: str = "uniform"
    loss: str = "focal"
    gamma: float = 2.0
    class_weights: tuple = (1.25, 0.833)
    seed: int = 0
    stop_at_val_accuracy: float = None

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ParamError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.half_period_epochs < 1:
            raise ParamError(f"half_period_epochs must be >= 1, got {self.half_period_epochs}")
        if self.clip_len < 1:
            raise ParamError(f"clip_len must be >= 1, got {self.clip_len}")
        AccumulationConfig(self.micro_batch, self.accumulation_steps)

    @property
    def accumulation(self):
        return AccumulationConfig(self.micro_batch, self.accumulation_steps)

    def build_loss_fn(self):
        return build_loss(self.loss, gamma=self.gamma, class_weights=self.class_weights)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["class_weights"] = list(self.class_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "class_weights" in d and d["class_weights"] is not None:
            d["class_weights"] = tuple(d["class_weights"])
        return cls(**d)


@dataclasses.dataclass
class TrainedRun:
    """What fit() leaves behind."""

    best_checkpoint: str
    swa_checkpoint: str
    log: tuple
    best_epoch: int
    best_val_accuracy: float
    stopped_epoch: int


def _micro_rng(seed, epoch, window, micro):
    return np.random.default_rng(child_seed(seed, "dropout", epoch, window, micro))


def train_epoch(model, videos, loss_fn, optimizer, accum, schedule, *,
                epoch, seed, clip_len=64, strategy="uniform", step_offset=0):
    """One pass over the training videos with gradient accumulation.

    Consumes floor(N / effective_batch) full windows in a seed-shuffled
    order; each window accumulates scaled micro-batch gradients and takes
    exactly one optimizer step. Returns (mean micro loss, steps taken).
    """
    order = np.random.default_rng(child_seed(seed, "epoch", epoch)).permutation(len(videos))
    effective = accum.effective_batch
    n_windows = len(videos) // effective
    if n_windows == 0:
        raise ParamError(f"{len(videos)} training videos cannot fill one window of {effective}")

    model.train()
    losses = []
    steps = 0
    for window in range(n_windows):
        optimizer.zero_grads()
        base = window * effective
        for micro in range(accum.accumulation_steps):
            lo = base + micro * accum.micro_batch
            batch = [videos[i] for i in order[lo:lo + accum.micro_batch]]
            clips, labels = clip_batch(batch, clip_len, strategy)
            logits = model(clips, rng=_micro_rng(seed, epoch, window, micro))
            loss = loss_fn(T.softmax(logits), labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingAbort(step_offset + steps, schedule.lr_at(step_offset + steps), value)
            losses.append(value)
            (loss * (1.0 / accum.accumulation_steps)).backward()
        optimizer.step(schedule.lr_at(step_offset + steps))
        optimizer.zero_grads()
        steps += 1
    return float(np.mean(losses)), steps


def evaluate_split(model, videos, loss_fn, *, micro_batch=4, clip_len=64, strategy="uniform"):
    """Mean loss and accuracy over a list of videos, gradient-free."""
    if not videos:
        raise ParamError("cannot evaluate an empty list of videos")
    model.eval()
    total_loss = 0.0
    hits = 0
    with no_grad():
        for lo in range(0, len(videos), micro_batch):
            batch = videos[lo:lo + micro_batch]
            clips, labels = clip_batch(batch, clip_len, strategy)
            probs = T.softmax(model(clips))
            loss = loss_fn(probs, labels)
            total_loss += float(loss.data) * len(batch)
            pred = np.where(probs.data[:, CLASS_T] > probs.data[:, CLASS_NT], CLASS_T, CLASS_NT)
            hits += int(np.sum(pred == labels))
    return total_loss / len(videos), hits / len(videos)


def fit(model, clips, split, config, out_dir):
    """Full training loop over one split; writes checkpoints and a CSV log.

    Deterministic given (seed, config, data): shuffling, dropout and clip
    sampling all derive from the config seed. The best-validation-accuracy
    checkpoint and the SWA average are both saved. The log CSV is appended
    and flushed per epoch so aborted runs keep their partial history.
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {c.id: c for c in clips}
    missing = [i for i in tuple(split.train) + tuple(split.validation) if i not in by_id]
    if missing:
        raise ParamError(f"split references unknown clip ids, e.g. {missing[0]!r}")
    train_videos = [by_id[i] for i in split.train]
    val_videos = [by_id[i] for i in split.validation]

    accum = config.accumulation
    steps_per_epoch = len(train_videos) // accum.effective_batch
    if steps_per_epoch == 0:
        raise ParamError(f"{len(train_videos)} training videos cannot fill one "
                         f"window of {accum.effective_batch}")
    schedule = CyclicSchedule(config.base_lr, config.max_lr,
                              half_period_steps=config.half_period_epochs * steps_per_epoch)
    optimizer = AdamW(model.named_parameters(), lr=config.max_lr,
                      weight_decay=config.weight_decay)
    loss_fn = config.build_loss_fn()
    swa = SWAState(start_epoch=config.swa_start_epoch)
    stopper = EarlyStopState(patience=config.patience)

    best_path = out / "best.ckpt"
    swa_path = out / "swa.ckpt"
    log_path = out / "epochs.csv"
    columns = ["epoch", "train_loss", "val_loss", "val_acc", "lr_last",
               "swa_included", "stopped"]
    rows = []
    step_total = 0
    stopped_epoch = 0
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        fh.flush()
        for epoch in range(1, config.max_epochs + 1):
            train_loss, steps = train_epoch(
                model, train_videos, loss_fn, optimizer, accum, schedule,
                epoch=epoch, seed=config.seed, clip_len=config.clip_len,
                strategy=config.sample_strategy, step_offset=step_total)
            step_total += steps
            lr_last = schedule.lr_at(step_total - 1)
            val_loss, val_acc = evaluate_split(
                model, val_videos, loss_fn, micro_batch=accum.micro_batch,
                clip_len=config.clip_len, strategy=config.sample_strategy)
            included = swa.update(model.state_dict(), epoch)
            stop, is_best = stopper.observe(val_loss, val_acc, epoch)
            if is_best:
                save_checkpoint(best_path, model, epoch=epoch, val_accuracy=val_acc)
            reached = (config.stop_at_val_accuracy is not None
                       and val_acc >= config.stop_at_val_accuracy)
            stopping = stop or reached or epoch == config.max_epochs
            row = dict(zip(columns, [epoch, f"{train_loss:.6f}", f"{val_loss:.6f}",
                                     f"{val_acc:.6f}", f"{lr_last:.3e}",
                                     int(included), int(stopping)]))
            rows.append(row)
            writer.writerow([row[c] for c in columns])
            fh.flush()
            if stopping:
                stopped_epoch = epoch
                break

    if swa.count == 0:
        swa.update(model.state_dict(), epoch=swa.start_epoch)
    swa_model = MultiPathNet(model.config)
    swa_model.load_state_dict(swa.average())
    save_checkpoint(swa_path, swa_model, epoch=stopped_epoch,
                    val_accuracy=stopper.best_accuracy)

    return TrainedRun(best_checkpoint=str(best_path), swa_checkpoint=str(swa_path),
                      log=tuple(rows), best_epoch=stopper.best_epoch,
                      best_val_accuracy=stopper.best_accuracy, stopped_epoch=stopped_epoch)
