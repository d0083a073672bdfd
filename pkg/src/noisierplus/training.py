"""Training loops (self-supervised Z -> Y and supervised), early stopping, checkpoints."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import struct
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, CorruptCheckpoint, DataError, DivergenceError
from .net import UNet, UNetConfig, build_unet

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NOISIERPLUS-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 8
    patience_epochs: int = 4
    max_epochs: int = 500
    loss: str = "mse"
    seed: int = 0
    strict_decrease: bool = True

    def __post_init__(self):
        if self.learning_rate < 0 or self.adam_eps <= 0:
            raise ConfigError("learning_rate must be >= 0 and adam_eps > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.patience_epochs < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience_epochs and max_epochs must be >= 1")
        if self.loss != "mse":
            raise ConfigError(f"unsupported loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class EarlyStopping:
    """Stop once the validation loss fails to decrease for ``patience`` consecutive epochs.

    With ``strict=True`` a tie with the best value counts as no decrease.
    Epochs are numbered from 1.
    """

    def __init__(self, patience: int, strict: bool = True):
        self.patience = patience
        self.strict = strict
        self.best = float("inf")
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        self.epoch += 1
        improved = val_loss < self.best if self.strict else val_loss <= self.best
        if improved:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def simulate_stopping(val_series, patience: int, strict: bool = True):
    """Return ``(stop_epoch, best_epoch)`` for a fixed validation-loss series."""
    es = EarlyStopping(patience, strict)
    for v in val_series:
        if es.step(v):
            break
    return es.epoch, es.best_epoch


@dataclass
class TrainedModel:
    net: UNet
    unet_config: UNetConfig
    train_config: TrainConfig
    history: list = field(default_factory=list)
    best_epoch: int = 0
    dataset_digest: str = ""
    mode: str = "self-supervised"

    @torch.no_grad()
    def apply(self, arr: np.ndarray) -> np.ndarray:
        """Run the network on one 2-D float array (or a stack of them)."""
        a = np.asarray(arr)
        squeeze = a.ndim == 2
        t = torch.tensor(a.reshape((-1, 1) + a.shape[-2:]), dtype=_dtype(self.net))
        self.net.eval()
        out = self.net(t).double().numpy()
        return out[0, 0] if squeeze else out[:, 0]

    def write_history_csv(self, path) -> Path:
        return write_history_csv(self.history, path)


def _dtype(net):
    return next(net.parameters()).dtype


def write_history_csv(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])
    return path


def _stack(planes, dtype) -> torch.Tensor:
    arr = np.stack([p.data for p in planes])[:, None]
    return torch.from_numpy(arr).to(dtype)


def self_supervised_pairs(records, dtype=torch.float32):
    """(input Z, target Y) tensors for a list of patch records."""
    return (_stack([r.triple.z_noisier_plus for r in records], dtype),
            _stack([r.triple.y_noisier for r in records], dtype))


def supervised_pairs(records, dtype=torch.float32):
    """(input X_ans, target clean_ans) tensors; every record needs its clean patch."""
    missing = [r.index for r in records if r.clean is None]
    if missing:
        raise DataError(f"supervised training needs clean patches; {len(missing)} missing (e.g. patch {missing[0]})")
    return (_stack([r.triple.x_ans for r in records], dtype),
            _stack([r.clean_rescaled for r in records], dtype))


def _per_sample_mse(out, target, scale):
    return (((out - target) / scale) ** 2).flatten(1).mean(dim=1)


@torch.no_grad()
def evaluate_loss(net: UNet, inputs, targets, batch_size: int = 32) -> float:
    net.eval()
    s = net.cfg.value_scale
    losses = []
    for i in range(0, len(inputs), batch_size):
        losses.append(_per_sample_mse(net(inputs[i:i + batch_size]), targets[i:i + batch_size], s).double())
    return float(torch.cat(losses).mean()) if losses else float("nan")


def fit(net: UNet, train_in, train_out, val_in, val_out, tcfg: TrainConfig, *,
        dataset_digest: str = "", mode: str = "self-supervised", progress=None) -> TrainedModel:
    """Minimize the MSE between ``net(train_in)`` and ``train_out`` with Adam.

    Validation loss is measured after every epoch; the returned model holds
    the weights of the best validation epoch.
    """
    if len(train_in) == 0:
        raise DataError("training split is empty")
    n = len(train_in)
    s = net.cfg.value_scale
    opt = torch.optim.Adam(net.parameters(), lr=tcfg.learning_rate,
                           betas=(tcfg.adam_beta1, tcfg.adam_beta2), eps=tcfg.adam_eps)
    stopper = EarlyStopping(tcfg.patience_epochs, tcfg.strict_decrease)
    best_state = copy.deepcopy(net.state_dict())
    history = []
    gen = torch.Generator().manual_seed(int(tcfg.seed))
    has_val = len(val_in) > 0

    for epoch in range(1, tcfg.max_epochs + 1):
        net.train()
        perm = torch.randperm(n, generator=gen)
        sample_loss = torch.zeros(n, dtype=torch.float64)
        for b, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = perm[start:start + tcfg.batch_size]
            per = _per_sample_mse(net(train_in[idx]), train_out[idx], s)
            loss = per.mean()
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {b + 1}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sample_loss[idx] = per.detach().double()
        train_loss = float(sample_loss.mean())
        val_loss = evaluate_loss(net, val_in, val_out) if has_val else train_loss
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        stop = stopper.step(val_loss)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(net.state_dict())
        if progress is not None:
            progress(epoch, train_loss, val_loss, stopper.best_epoch)
        if stop:
            break

    net.load_state_dict(best_state)
    net.eval()
    return TrainedModel(net, net.cfg, tcfg, history, stopper.best_epoch, dataset_digest, mode)


def print_progress(epoch, train_loss, val_loss, best_epoch, stream=sys.stdout):
    print(f"epoch {epoch:4d}  train {train_loss:.6f}  val {val_loss:.6f}  best {best_epoch}", file=stream, flush=True)


def train(net: UNet, data, tcfg: TrainConfig, progress=None) -> TrainedModel:
    """Self-supervised training: learn the noisier+ -> noisier mapping."""
    dtype = _dtype(net)
    tr_in, tr_out = self_supervised_pairs(data.train, dtype)
    va_in, va_out = self_supervised_pairs(data.val, dtype) if data.val else (tr_in[:0], tr_out[:0])
    return fit(net, tr_in, tr_out, va_in, va_out, tcfg, dataset_digest=data.digest, progress=progress)


def train_supervised(net: UNet, data, tcfg: TrainConfig, progress=None) -> TrainedModel:
    """Upper-bound training on (real-noisy, clean) pairs in the same rescaled Anscombe domain."""
    dtype = _dtype(net)
    tr_in, tr_out = supervised_pairs(data.train, dtype)
    va_in, va_out = supervised_pairs(data.val, dtype) if data.val else (tr_in[:0], tr_out[:0])
    return fit(net, tr_in, tr_out, va_in, va_out, tcfg, dataset_digest=data.digest,
               mode="supervised", progress=progress)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------
# Layout: MAGIC | u64 header length | JSON header | torch state_dict payload.
# The header records the payload's SHA-256.


def save_model(model: TrainedModel, path) -> Path:
    buf = io.BytesIO()
    state = {k: v.detach().cpu() for k, v in model.net.state_dict().items()}
    torch.save(state, buf)
    payload = buf.getvalue()
    header = {
        "version": CHECKPOINT_VERSION,
        "mode": model.mode,
        "unet_config": model.unet_config.to_dict(),
        "train_config": model.train_config.to_dict(),
        "history": model.history,
        "best_epoch": model.best_epoch,
        "dataset_digest": model.dataset_digest,
        "dtype": str(_dtype(model.net)).replace("torch.", ""),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "payload_bytes": len(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    return path


def load_model(path, expected_unet_config: Optional[UNetConfig] = None) -> TrainedModel:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from None
    m = len(CHECKPOINT_MAGIC)
    if blob[:m] != CHECKPOINT_MAGIC or len(blob) < m + 8:
        raise CorruptCheckpoint(f"{path}: corrupt checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[m:m + 8])
    try:
        header = json.loads(blob[m + 8:m + 8 + hlen])
    except (ValueError, UnicodeDecodeError):
        raise CorruptCheckpoint(f"{path}: corrupt checkpoint (unreadable header)") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    payload = blob[m + 8 + hlen:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpoint(f"{path}: corrupt checkpoint (payload digest mismatch)")
    ucfg = UNetConfig(**header["unet_config"])
    if expected_unet_config is not None and expected_unet_config != ucfg:
        raise ConfigError(f"{path}: config mismatch: checkpoint has {ucfg}, expected {expected_unet_config}")
    tcfg = TrainConfig(**header["train_config"])
    state = torch.load(io.BytesIO(payload), weights_only=True)
    net = build_unet(ucfg, dtype=getattr(torch, header.get("dtype", "float32")))
    net.load_state_dict(state)
    net.eval()
    return TrainedModel(net, ucfg, tcfg, header["history"], header["best_epoch"],
                        header["dataset_digest"], header.get("mode", "self-supervised"))
