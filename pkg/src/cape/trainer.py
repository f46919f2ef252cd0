"""End-to-end optimisation of a composition model on frozen image features."""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import TrainingView
from .errors import AbortOnNaN, ConfigError, DataError, EmptyPartition
from .evaluator import evaluate
from .optim import AdamState, adam_step
from .propagator import VARIANTS, CompositionModel, ModelConfig, model_config_from_dict
from .scoring import ScoreMatrix, compatibility, cross_entropy_loss
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "val_auc", "val_hm", "val_seen", "val_unseen")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "cape"
    lr: float = 5.0e-5
    batch_size: int = 30
    epochs: int = 120
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    n_heads: int = 6
    hidden_dim: int = 4096
    dropout_p: float = 0.5
    scale_attention: bool = True
    use_output_projection: bool = False
    logit_scale: float = 1.0
    eval_every: int = 1
    n_bias: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("lr must be >= 0; batch_size, eval_every >= 1; epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if self.logit_scale <= 0:
            raise ConfigError("logit_scale must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def model_config(self, word_dim, out_dim):
        return ModelConfig(
            variant=self.variant, word_dim=word_dim, out_dim=out_dim, n_heads=self.n_heads,
            hidden_dim=self.hidden_dim, dropout_p=self.dropout_p,
            scale_attention=self.scale_attention,
            use_output_projection=self.use_output_projection)


@dataclass
class TrainResult:
    model: CompositionModel
    best_params: dict
    best_auc: float | None
    best_epoch: int | None
    log: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    view: TrainingView | None = None
    adam: AdamState | None = None


# -- scoring a partition -----------------------------------------------------------

def partition_columns(table, partition):
    """Candidate compositions for ``partition``: seen plus that partition's unseen pairs."""
    if partition == "val":
        return table.ids("seen", "unseen_val")
    if partition == "test":
        return table.ids("seen", "unseen_test")
    if partition == "train":
        return table.ids("seen")
    raise ValueError(f"unknown partition {partition!r}")


def score_partition(model, dataset, partition, logit_scale=1.0):
    """Cosine scores for every record of ``partition`` against its candidate columns."""
    table = dataset.table
    cols = partition_columns(table, partition)
    idx = dataset.features.partition(partition)
    if idx.size == 0:
        raise EmptyPartition(f"partition {partition!r} has no records")
    col_of = {int(c): j for j, c in enumerate(cols)}
    try:
        labels = np.array([col_of[int(c)] for c in dataset.features.composition_ids[idx]])
    except KeyError as exc:
        raise DataError(
            f"{partition} record labelled with composition {exc.args[0]} outside its columns"
        ) from None
    with no_grad():
        out = model.forward(cols, training=False)
        feats = dataset.features.features[idx].astype(np.float64)
        scores = compatibility(Tensor(feats), out.Y_F, logit_scale).data
    return ScoreMatrix(scores, [table.column_name(int(c)) for c in cols],
                       np.array([not table.is_seen(int(c)) for c in cols]), labels,
                       temperature=logit_scale)


def evaluate_model(model, dataset, partition="val", n_bias=None):
    sm = score_partition(model, dataset, partition)
    return evaluate(sm.scores, sm.labels, sm.unseen, n_bias=n_bias), sm


# -- checkpoints -------------------------------------------------------------------------

def _meta(model, config, rng, epoch, best_auc, best_epoch, log_rows, adam_t):
    return {
        "model": model.config.to_dict(),
        "train": config.to_dict(),
        "seed": config.seed,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "epoch": epoch,
        "adam_t": adam_t,
        "best_auc": best_auc,
        "best_epoch": best_epoch,
        "log": log_rows,
    }


def save_training_checkpoint(path, model, config, rng=None, adam=None, epoch=0,
                             best_auc=None, best_epoch=None, log_rows=()):
    tensors = {f"param/{k}": p.data for k, p in model.params.items()}
    if adam is not None:
        tensors.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        tensors.update({f"adam.v/{k}": v for k, v in adam.v.items()})
    meta = _meta(model, config, rng, epoch, best_auc, best_epoch, list(log_rows),
                 adam.t if adam is not None else 0)
    save_checkpoint(path, tensors, meta)


def load_model(path, dataset):
    """Rebuild the model stored at ``path`` around ``dataset``'s table and embeddings."""
    tensors, meta = load_checkpoint(path)
    cfg = model_config_from_dict(meta["model"])
    params = {k[len("param/"):]: Tensor(v, requires_grad=True, name=k[len("param/"):])
              for k, v in tensors.items() if k.startswith("param/")}
    model = CompositionModel(cfg, dataset.table, dataset.embeddings, params=params)
    expected = set(CompositionModel(cfg, dataset.table, dataset.embeddings,
                                    rng=np.random.default_rng(0)).params)
    if set(params) != expected:
        raise DataError(f"{path}: parameter names do not match a {cfg.variant} model")
    return model, meta, tensors


def _write_log(out_dir, rows, wall_ms):
    with open(out_dir / "train_log.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow(["" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else r[c]
                        for c in LOG_COLUMNS])
    # wall-clock timings vary run to run; they live in a sidecar
    with open(out_dir / "timing.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "wall_ms"])
        for r, ms in zip(rows, wall_ms):
            w.writerow([r["epoch"], f"{ms:.3f}"])


# -- the loop ---------------------------------------------------------------------------------

def train(dataset, config, out_dir=None, resume=None, stop_after=None, on_epoch=None):
    """Optimise ``config.variant`` on the train partition of ``dataset``.

    Each step forwards every seen composition, scores the mini-batch against
    them and takes one Adam step on the cross-entropy. Validation AUC is
    computed every ``eval_every`` epochs; the best-AUC parameters and the
    latest state go to ``out_dir/best.ckpt`` and ``out_dir/last.ckpt``.

    ``resume`` is a ``last.ckpt`` written by an earlier call with the same
    config; the continued run is bitwise identical to an uninterrupted one.
    ``stop_after`` ends the run after that many total epochs (for testing
    resumption).
    """
    view = TrainingView(dataset)
    seen = view.compositions(view.seen_ids)
    if view.n_train == 0:
        raise EmptyPartition("train partition is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    mcfg = config.model_config(dataset.embeddings.dim, dataset.features.dim)
    model = CompositionModel(mcfg, dataset.table, dataset.embeddings, rng=rng)
    adam = AdamState.zeros_like(model.params)
    start_epoch, best_auc, best_epoch, rows, wall = 0, None, None, [], []
    best_params = {k: p.data.copy() for k, p in model.params.items()}

    if resume is not None:
        tensors, meta = load_checkpoint(resume)
        if TrainConfig.from_dict(meta["train"]) != config:
            raise ConfigError("resume checkpoint was written with a different config")
        for k, p in model.params.items():
            p.data = tensors[f"param/{k}"].copy()
            adam.m[k] = tensors[f"adam.m/{k}"].copy()
            adam.v[k] = tensors[f"adam.v/{k}"].copy()
        adam.t = meta["adam_t"]
        rng.bit_generator.state = meta["rng_state"]
        start_epoch, best_auc, best_epoch = meta["epoch"], meta["best_auc"], meta["best_epoch"]
        rows = list(meta["log"])
        wall = [0.0] * len(rows)
        best_path = Path(resume).with_name("best.ckpt")
        if best_path.exists():
            btensors, _ = load_checkpoint(best_path)
            best_params = {k: btensors[f"param/{k}"].copy() for k in model.params}

    last_epoch = config.epochs if stop_after is None else min(config.epochs, stop_after)
    step = adam.t
    for epoch in range(start_epoch + 1, last_epoch + 1):
        t0 = time.perf_counter()
        order = rng.permutation(view.n_train)
        total, count = 0.0, 0
        for lo in range(0, view.n_train, config.batch_size):
            feats, labels = view.batch(order[lo:lo + config.batch_size])
            out = model.forward(seen, training=True, rng=rng)
            scores = compatibility(Tensor(feats), out.Y_F, config.logit_scale)
            loss = cross_entropy_loss(scores, labels, seen)
            value = loss.item()
            step += 1
            if not np.isfinite(value):
                raise AbortOnNaN(step, value)
            for p in model.params.values():
                p.grad = None
            loss.backward()
            adam_step(model.params, adam, config.lr, config.beta1, config.beta2,
                      config.adam_eps)
            total += value * len(labels)
            count += len(labels)

        row = {"epoch": epoch, "train_loss": total / count, "val_auc": None, "val_hm": None,
               "val_seen": None, "val_unseen": None}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            try:
                curve, _ = evaluate_model(model, dataset, "val", config.n_bias)
            except EmptyPartition:
                curve = None
            if curve is not None:
                row.update(val_auc=curve.auc, val_hm=curve.best_hm,
                           val_seen=curve.best_seen, val_unseen=curve.best_unseen)
                if best_auc is None or curve.auc > best_auc:
                    best_auc, best_epoch = curve.auc, epoch
                    best_params = {k: p.data.copy() for k, p in model.params.items()}
                    if out_dir is not None:
                        save_training_checkpoint(out_dir / "best.ckpt", model, config,
                                                 epoch=epoch, best_auc=best_auc,
                                                 best_epoch=best_epoch)
        rows.append(row)
        wall.append((time.perf_counter() - t0) * 1000.0)
        log.info("epoch %d loss %.6f val_auc %s", epoch, row["train_loss"], row["val_auc"])
        if out_dir is not None:
            save_training_checkpoint(out_dir / "last.ckpt", model, config, rng, adam, epoch,
                                     best_auc, best_epoch, rows)
            _write_log(out_dir, rows, wall)
        if on_epoch is not None:
            on_epoch(row, model)

    best = {k: Tensor(v, requires_grad=True, name=k) for k, v in best_params.items()}
    return TrainResult(model=model, best_params=best, best_auc=best_auc, best_epoch=best_epoch,
                       log=rows, wall_ms=wall, view=view, adam=adam)
