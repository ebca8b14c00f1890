"""Training loop, evaluation and the checkpoint container."""

from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.ops import softmax_cross_entropy
from .autodiff.optim import Adam
from .autodiff.tensor import backward, reset_tape
from .data import TSDataset, batch_iterator
from .errors import DataError, DimensionError, IntegrityError, NonFiniteError
from .model import ModelConfig, TodyNet

CHECKPOINT_MAGIC = b"TODYNET-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class TrainReport:
    loss_curve: list = field(default_factory=list)
    train_accuracy: float = float("nan")
    test_accuracy: float | None = None
    best_epoch: int = -1
    best_loss: float = float("inf")
    runtime_s: float = 0.0
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self):
        return {
            "loss_curve": [float(v) for v in self.loss_curve],
            "train_accuracy": float(self.train_accuracy),
            "test_accuracy": None if self.test_accuracy is None else float(self.test_accuracy),
            "best_epoch": self.best_epoch,
            "best_loss": float(self.best_loss),
            "runtime_s": self.runtime_s,
            "config": self.config,
            "seed": self.seed,
        }


def build_model(ds: TSDataset, cfg: ModelConfig) -> TodyNet:
    return TodyNet(cfg, ds.X.shape[1], ds.X.shape[2], ds.header.n_classes)


def train(ds_train: TSDataset, cfg: ModelConfig, ds_test: TSDataset | None = None,
          model: TodyNet | None = None, log=None):
    """Fit a model and return ``(model, report)``.

    The returned model holds the parameters of the epoch with the lowest mean
    training loss.  ``log`` is called as ``log(epoch, loss)`` after each epoch.
    """
    if len(ds_train) == 0:
        raise DataError("training set is empty")
    started = time.perf_counter()
    ds_train = ds_train.astype(cfg.dtype)
    if model is None:
        model = build_model(ds_train, cfg)
    _check_compatible(model, ds_train)
    opt = Adam(model.parameters(), lr=cfg.lr)
    report = TrainReport(config=cfg.to_dict(), seed=cfg.seed)
    best_state = model.state_dict()

    for epoch in range(cfg.epochs):
        total, seen = 0.0, 0
        for b, (xb, yb) in enumerate(batch_iterator(ds_train, cfg.batch_size, cfg.seed, epoch)):
            reset_tape()
            opt.zero_grad()
            loss = softmax_cross_entropy(model.forward(xb, training=True), yb)
            value = float(loss.data)
            if not np.isfinite(value):
                reset_tape()
                raise NonFiniteError(f"non-finite loss at epoch {epoch} batch {b}")
            try:
                backward(loss)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch} batch {b}: {exc}") from exc
            opt.step()
            total += value * len(yb)
            seen += len(yb)
        epoch_loss = total / seen
        report.loss_curve.append(epoch_loss)
        if epoch_loss < report.best_loss:
            report.best_loss = epoch_loss
            report.best_epoch = epoch
            best_state = model.state_dict()
        if log is not None:
            log(epoch, epoch_loss)

    model.load_state_dict(best_state)
    report.train_accuracy = evaluate(model, ds_train)
    if ds_test is not None:
        report.test_accuracy = evaluate(model, ds_test)
    report.runtime_s = time.perf_counter() - started
    return model, report


def _check_compatible(model: TodyNet, ds: TSDataset):
    if ds.header.n_classes != model.num_classes:
        raise DataError(f"dataset has {ds.header.n_classes} classes, model was built for {model.num_classes}")
    if ds.X.shape[1:] != (model.num_nodes, model.length):
        raise DimensionError(
            f"dataset series are {ds.X.shape[1]}x{ds.X.shape[2]}, model expects {model.num_nodes}x{model.length}")


def predict(model: TodyNet, X) -> np.ndarray:
    """Class indices; ties go to the smaller index."""
    logits = model.predict_logits(np.asarray(X))
    return np.argmax(logits, axis=1)


def evaluate(model: TodyNet, ds: TSDataset) -> float:
    _check_compatible(model, ds)
    if len(ds) == 0:
        raise DataError("evaluation set is empty")
    pred = predict(model, ds.X.astype(model.cfg.dtype, copy=False))
    return float(np.mean(pred == ds.y))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: TodyNet, path, meta=None):
    """Write a self-verifying checkpoint.

    Layout: magic line, 64 hex chars of sha256 over the payload, newline, then
    an ``.npz`` payload holding ``param/<name>``, ``buffer/<name>`` and a JSON
    header (format version, config, shapes, extra ``meta``).
    """
    header = {
        "format": "todynet-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "num_nodes": model.num_nodes,
        "length": model.length,
        "num_classes": model.num_classes,
        "seed": model.cfg.seed,
        "params": {n: list(p.shape) for n, p in model.named_parameters().items()},
        "meta": meta or {},
    }
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, p in model.named_parameters().items():
        arrays[f"param/{name}"] = p.data
    for name, value in model.state_dict().items():
        if name not in model.named_parameters():
            arrays[f"buffer/{name}"] = value
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).hexdigest().encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(CHECKPOINT_MAGIC + digest + b"\n" + payload)
    return path


def load_checkpoint(path, cfg: ModelConfig | None = None):
    """Return ``(model, header)``.

    Raises :class:`IntegrityError` for a missing, truncated or corrupted file,
    and when ``cfg`` disagrees with the stored architecture.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise IntegrityError(f"{path} is not a checkpoint (bad magic)")
    rest = raw[len(CHECKPOINT_MAGIC):]
    if len(rest) < 65 or rest[64:65] != b"\n":
        raise IntegrityError(f"{path}: truncated checkpoint header")
    digest, payload = rest[:64].decode("ascii", "replace"), rest[65:]
    if hashlib.sha256(payload).hexdigest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        header = json.loads(str(arrays.pop("__header__")))
    except Exception as exc:  # any decoding failure means a damaged payload
        raise IntegrityError(f"{path}: unreadable payload: {exc}") from exc
    if header.get("format") != "todynet-checkpoint" or header.get("version") != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {header.get('version')!r}")

    stored = ModelConfig.from_dict(header["config"])
    if cfg is not None and cfg.architecture() != stored.architecture():
        diff = sorted(k for k, v in stored.architecture().items() if cfg.architecture().get(k) != v)
        raise IntegrityError(f"{path}: configuration mismatch in {', '.join(diff)}")
    model = TodyNet(stored, header["num_nodes"], header["length"], header["num_classes"])
    state = {}
    for key, value in arrays.items():
        kind, _, name = key.partition("/")
        if kind in ("param", "buffer"):
            state[name] = value
    try:
        model.load_state_dict(state)
    except (KeyError, DimensionError) as exc:
        raise IntegrityError(f"{path}: parameter table does not match config: {exc}") from exc
    return model, header
