"""Training loop: loss composition, Adam updates, checkpoints, ablation grid.

The total objective combines five weighted terms: the (optionally perturbed)
video-level classification loss, its local segment-repulsion companion, the
clip-order recovery loss, the classification loss on synthesized videos, and
the attention self-guidance gap. Toggled-off terms contribute exactly zero and
are never computed. The first ``warmup_epochs`` epochs train without input
perturbations and without synthesized videos so segmentation has signal to
stabilize first.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import ndtensor as nd
from .adversarial import global_adv_loss, local_adv_loss
from .attention import (
    compute_attention,
    pool_action,
    pool_background,
    compute_tcam,
    segment_by_attention,
    self_guided_loss,
)
from .data import DatasetManifest, VideoRecord
from .inter import augment_training_set, build_pool, inter_loss
from .intra import intra_loss, make_shuffled_task, predict_order
from .model import Model
from .ndtensor import AdamState, GradTape, Tensor, adam_step

__all__ = [
    "Hyperparams",
    "LossBreakdown",
    "TrainResult",
    "Checkpoint",
    "CheckpointError",
    "TrainingDiverged",
    "total_loss",
    "train",
    "ablate",
    "ABLATION_GRID",
    "predict_video_class",
    "classification_accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "write_metrics_csv",
]

CHECKPOINT_MAGIC = b"ASCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    """Checkpoint file is malformed or incompatible."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the last finished epoch's state was restored."""


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------


@dataclass
class Hyperparams:
    """Every knob of training, decoding, and loss composition."""

    # loss weights
    alpha: float = 1.0  # background classification term
    beta: float = 0.01  # local adversarial term
    epsilon: float = 0.001  # perturbation budget
    eta: float = 1.0  # clip-order term
    theta: float = 0.1  # synthesized-video term
    gamma: float = 0.1  # attention self-guidance term
    # optimizer
    learning_rate: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # schedule
    epochs: int = 100
    batch_size: int = 8
    warmup_epochs: int = 5
    seed: int = 0
    # model sizes
    hidden_attention: int = 256
    hidden_relation: int = 256
    # clip-order task
    n_clips: int = 5
    clip_len: int | None = None
    # synthesized videos
    augment_factor: int = 3
    delta_inflate: int = 2
    k_min: int = 2
    k_max: int = 5
    # segmentation and smoothing
    tau_att: float = 0.5
    min_seg_len: int = 3
    sigma_smooth: float = 1.0
    # detection decoding
    tau_loc: float = 0.5
    tau_loc_mode: str = "relative"
    merge_gap: int = 6
    # local adversarial clamp
    local_clamp: float = -10.0
    # pooling denominator stabilizer used during training/eval
    pool_eps: float = 1e-8
    # term toggles
    use_adv: bool = True
    use_intra: bool = True
    use_inter: bool = True
    use_guide: bool = True

    def validate(self) -> None:
        for name in ("alpha", "beta", "epsilon", "eta", "theta", "gamma", "pool_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"Hyperparams: {name} must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("Hyperparams: learning_rate must be positive")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("Hyperparams: epochs and warmup_epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("Hyperparams: batch_size must be >= 1")
        if self.n_clips < 2:
            raise ValueError("Hyperparams: n_clips must be >= 2")
        if not (0.0 < self.tau_att < 1.0):
            raise ValueError("Hyperparams: tau_att must be inside (0, 1)")
        if self.tau_loc <= 0.0:
            raise ValueError("Hyperparams: tau_loc must be positive")
        if self.tau_loc_mode not in ("relative", "absolute"):
            raise ValueError("Hyperparams: tau_loc_mode must be 'relative' or 'absolute'")
        if self.min_seg_len < 1:
            raise ValueError("Hyperparams: min_seg_len must be >= 1")
        if self.merge_gap < 0:
            raise ValueError("Hyperparams: merge_gap must be >= 0")
        if self.sigma_smooth <= 0:
            raise ValueError("Hyperparams: sigma_smooth must be positive")
        if not (1 <= self.k_min <= self.k_max):
            raise ValueError("Hyperparams: need 1 <= k_min <= k_max")
        if self.augment_factor < 0 or self.delta_inflate < 0:
            raise ValueError("Hyperparams: augment_factor and delta_inflate must be >= 0")
        if self.clip_len is not None and self.clip_len < 1:
            raise ValueError("Hyperparams: clip_len must be >= 1 when set")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "Hyperparams":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"Hyperparams: unknown keys {sorted(unknown)}")
        hp = cls(**doc)
        hp.validate()
        return hp

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def compatibility_hash(self) -> str:
        """Hash of everything except the epoch budget; governs resumability."""
        doc = self.to_json()
        doc.pop("epochs")
        payload = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class LossBreakdown:
    """Unweighted per-term values; the weighted sum reproduces the total."""

    global_term: float = 0.0
    local_term: float = 0.0
    intra_term: float = 0.0
    inter_term: float = 0.0
    guide_term: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict:
        return {
            "global": self.global_term,
            "local": self.local_term,
            "intra": self.intra_term,
            "inter": self.inter_term,
            "guide": self.guide_term,
            "total": self.total,
        }


# ---------------------------------------------------------------------------
# Loss composition
# ---------------------------------------------------------------------------


def total_loss(
    batch: list[VideoRecord],
    model: Model,
    hp: Hyperparams,
    rng: np.random.Generator | None = None,
    *,
    adv_active: bool = True,
    inter_active: bool = True,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted training objective over one batch of videos.

    Original videos contribute the classification/perturbation terms, the clip
    order term, and the guidance term; synthesized videos contribute only the
    classification term on themselves. ``adv_active`` / ``inter_active`` let
    the warmup schedule silence terms without changing the configuration.
    Deterministic for a fixed batch, parameters, and rng state.
    """
    if not batch:
        raise ValueError("total_loss: empty batch")
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    adv_on = hp.use_adv and adv_active
    eff_eps = hp.epsilon if adv_on else 0.0
    eff_beta = hp.beta if adv_on else 0.0

    global_terms: list[Tensor] = []
    local_terms: list[Tensor] = []
    guide_terms: list[Tensor] = []
    order_preds: list[tuple[Tensor, int]] = []
    inter_terms: list[Tensor] = []

    for video in batch:
        if video.is_generated:
            if hp.use_inter and inter_active:
                inter_terms.append(inter_loss(video, model, hp.alpha, pool_eps=hp.pool_eps))
            continue
        features = video.features
        t_len = features.t_len
        y = video.label.vector()
        lam = compute_attention(features, model.attention)
        x_a = pool_action(features, lam, 1, t_len + 1, eps=hp.pool_eps)
        x_b = pool_background(features, lam, 1, t_len + 1, eps=hp.pool_eps)
        global_terms.append(
            global_adv_loss(model.classifier, x_a, x_b, y, hp.alpha, eff_eps)
        )
        segments = segment_by_attention(lam.values, hp.tau_att, hp.min_seg_len)
        if eff_beta != 0.0:
            local_terms.append(
                local_adv_loss(
                    features,
                    lam,
                    segments,
                    model.classifier,
                    eff_eps,
                    pool_eps=hp.pool_eps,
                    clamp_floor=hp.local_clamp,
                )
            )
        if hp.use_guide:
            lhat_a, lhat_b = compute_tcam(
                features, model.classifier, list(video.label.classes), hp.sigma_smooth
            )
            guide_terms.append(self_guided_loss(lam, lhat_a, lhat_b))
        if hp.use_intra:
            for segment in segments.actions:
                task = make_shuffled_task(
                    features,
                    lam,
                    segment,
                    hp.n_clips,
                    rng,
                    clip_len=hp.clip_len,
                    eps=hp.pool_eps,
                )
                if task is not None:
                    shuffled, label = task
                    order_preds.append((predict_order(shuffled, model.order_net), label))

    breakdown = LossBreakdown()
    pieces: list[tuple[Tensor, float]] = []
    if global_terms:
        g = nd.mean_scalars(global_terms)
        breakdown.global_term = g.item()
        pieces.append((g, 1.0))
    if local_terms:
        l = nd.mean_scalars(local_terms)
        breakdown.local_term = l.item()
        pieces.append((l, eff_beta))
    if order_preds:
        o = intra_loss(order_preds)
        breakdown.intra_term = o.item()
        pieces.append((o, hp.eta))
    if inter_terms:
        i = nd.mean_scalars(inter_terms)
        breakdown.inter_term = i.item()
        pieces.append((i, hp.theta))
    if guide_terms:
        u = nd.mean_scalars(guide_terms)
        breakdown.guide_term = u.item()
        pieces.append((u, hp.gamma))
    if not pieces:
        raise ValueError("total_loss: batch produced no loss terms")
    total = nd.mul(pieces[0][0], pieces[0][1])
    for tensor, weight in pieces[1:]:
        total = nd.add(total, nd.mul(tensor, weight))
    breakdown.total = total.item()
    return total, breakdown


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def predict_video_class(video: VideoRecord, model: Model, pool_eps: float = 1e-8) -> int:
    """Most likely action class (1-based) from whole-video pooling."""
    from .attention import video_class_probs

    probs = video_class_probs(video.features, model.attention, model.classifier, eps=pool_eps)
    return int(np.argmax(probs[: model.num_classes])) + 1


def classification_accuracy(manifest: DatasetManifest, model: Model, pool_eps: float = 1e-8) -> float:
    """Fraction of videos whose top action class is among their labels."""
    if len(manifest) == 0:
        raise ValueError("classification_accuracy: empty manifest")
    hits = 0
    for video in manifest:
        if video.is_generated:
            continue
        hits += predict_video_class(video, model, pool_eps) in video.label.classes
    originals = sum(1 for v in manifest if not v.is_generated)
    return hits / originals


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-exactly."""

    model: Model
    adam: AdamState
    rng_state: dict
    epoch: int
    hp: Hyperparams

    def make_rng(self) -> np.random.Generator:
        rng = np.random.default_rng(0)
        rng.bit_generator.state = self.rng_state
        return rng


def _rng_state_to_json(state: dict) -> dict:
    return json.loads(json.dumps(state, default=int))


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Serialize parameters, optimizer moments, rng state, and config."""
    model = checkpoint.model
    params = model.params()
    names = list(params.keys())
    arrays: list[tuple[str, str, np.ndarray]] = []
    for name in names:
        arrays.append((name, "param", params[name].values))
    for name in names:
        arrays.append((name, "m", checkpoint.adam.m[name]))
    for name in names:
        arrays.append((name, "v", checkpoint.adam.v[name]))
    meta = {
        "epoch": checkpoint.epoch,
        "num_classes": model.num_classes,
        "feat_dim": model.feat_dim,
        "hp": checkpoint.hp.to_json(),
        "config_hash": checkpoint.hp.config_hash(),
        "rng_state": _rng_state_to_json(checkpoint.rng_state),
        "adam": {
            "step": checkpoint.adam.step,
            "learning_rate": checkpoint.adam.learning_rate,
            "beta1": checkpoint.adam.beta1,
            "beta2": checkpoint.adam.beta2,
            "eps": checkpoint.adam.eps,
        },
        "arrays": [
            {"name": name, "group": group, "shape": list(arr.shape)}
            for name, group, arr in arrays
        ],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    _, version, meta_len = _CKPT_HEADER.unpack_from(raw)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta_end = _CKPT_HEADER.size + meta_len
    if len(raw) < meta_end:
        raise CheckpointError(f"{path}: truncated metadata")
    meta = json.loads(raw[_CKPT_HEADER.size : meta_end].decode())
    hp = Hyperparams.from_json(meta["hp"])
    buffers: dict[tuple[str, str], np.ndarray] = {}
    offset = meta_end
    for descriptor in meta["arrays"]:
        shape = tuple(descriptor["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if len(raw) < offset + nbytes:
            raise CheckpointError(
                f"{path}: truncated buffer for {descriptor['name']}/{descriptor['group']}"
            )
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        buffers[(descriptor["name"], descriptor["group"])] = arr
        offset += nbytes

    from .attention import AttentionNetParams, ClassifierParams
    from .intra import OrderNetParams

    def param(name):
        return Tensor(buffers[(name, "param")], requires_grad=True)

    model = Model(
        num_classes=int(meta["num_classes"]),
        feat_dim=int(meta["feat_dim"]),
        attention=AttentionNetParams(
            w1=param("attention.w1"),
            b1=param("attention.b1"),
            w2=param("attention.w2"),
            b2=param("attention.b2"),
        ),
        classifier=ClassifierParams(w=param("classifier.w")),
        order_net=OrderNetParams(
            n_clips=hp.n_clips,
            w1=param("order.w1"),
            b1=param("order.b1"),
            w2=param("order.w2"),
            b2=param("order.b2"),
        ),
    )
    adam_meta = meta["adam"]
    adam = AdamState(
        learning_rate=adam_meta["learning_rate"],
        beta1=adam_meta["beta1"],
        beta2=adam_meta["beta2"],
        eps=adam_meta["eps"],
        step=int(adam_meta["step"]),
        m={name: buffers[(name, "m")] for name in model.params()},
        v={name: buffers[(name, "v")] for name in model.params()},
    )
    return Checkpoint(
        model=model,
        adam=adam,
        rng_state=meta["rng_state"],
        epoch=int(meta["epoch"]),
        hp=hp,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    metrics: list[dict]
    checkpoint: Checkpoint
    diverged: bool = False
    checkpoint_path: Path | None = None


def _snapshot(model: Model, adam: AdamState, rng: np.random.Generator, epoch: int, hp: Hyperparams) -> Checkpoint:
    """Deep-copy the full training state so later steps cannot mutate it."""
    from .attention import AttentionNetParams, ClassifierParams
    from .intra import OrderNetParams

    def copy_tensor(t: Tensor) -> Tensor:
        return Tensor(np.array(t.values, copy=True), requires_grad=True)

    copied_model = Model(
        num_classes=model.num_classes,
        feat_dim=model.feat_dim,
        attention=AttentionNetParams(
            w1=copy_tensor(model.attention.w1),
            b1=copy_tensor(model.attention.b1),
            w2=copy_tensor(model.attention.w2),
            b2=copy_tensor(model.attention.b2),
        ),
        classifier=ClassifierParams(w=copy_tensor(model.classifier.w)),
        order_net=OrderNetParams(
            n_clips=model.order_net.n_clips,
            w1=copy_tensor(model.order_net.w1),
            b1=copy_tensor(model.order_net.b1),
            w2=copy_tensor(model.order_net.w2),
            b2=copy_tensor(model.order_net.b2),
        ),
    )
    copied_adam = AdamState(
        learning_rate=adam.learning_rate,
        beta1=adam.beta1,
        beta2=adam.beta2,
        eps=adam.eps,
        step=adam.step,
        m={k: np.array(v, copy=True) for k, v in adam.m.items()},
        v={k: np.array(v, copy=True) for k, v in adam.v.items()},
    )
    return Checkpoint(
        model=copied_model,
        adam=copied_adam,
        rng_state=json.loads(json.dumps(rng.bit_generator.state, default=int)),
        epoch=epoch,
        hp=hp,
    )


def _restore(model: Model, adam: AdamState, snapshot: Checkpoint) -> None:
    saved = snapshot.model.params()
    for name, tensor in model.params().items():
        tensor.values[...] = saved[name].values
    adam.step = snapshot.adam.step
    for name in adam.m:
        adam.m[name][...] = snapshot.adam.m[name]
        adam.v[name][...] = snapshot.adam.v[name]


def train(
    manifest: DatasetManifest,
    hp: Hyperparams,
    val_manifest: DatasetManifest | None = None,
    out_dir: str | Path | None = None,
    resume_from: Checkpoint | str | Path | None = None,
    on_epoch=None,
) -> TrainResult:
    """Train a model on weakly labeled videos; deterministic per hp.seed.

    Per epoch: optionally rebuild the action pool and synthesize extra videos
    (after warmup), shuffle originals and synthesized together, and take one
    Adam step per batch. Emits per-epoch loss-term means plus classification
    accuracy (on ``val_manifest`` when given, else the training videos). With
    ``out_dir`` set, writes metrics.csv, loss_curves.png, and checkpoint.bin.
    A non-finite loss aborts: the last finished epoch's state is restored and
    the result is flagged diverged.
    """
    hp.validate()
    if len(manifest) == 0:
        raise ValueError("train: empty manifest")
    feat_dim = manifest.videos[0].features.feat_dim
    for v in manifest:
        if v.features.feat_dim != feat_dim:
            raise ValueError(
                f"train: inconsistent feature dims ({v.features.feat_dim} vs {feat_dim})"
            )

    if resume_from is not None:
        ckpt = resume_from if isinstance(resume_from, Checkpoint) else load_checkpoint(resume_from)
        if ckpt.hp.compatibility_hash() != hp.compatibility_hash():
            raise CheckpointError("train: checkpoint configuration does not match")
        model = ckpt.model
        adam = ckpt.adam
        rng = ckpt.make_rng()
        start_epoch = ckpt.epoch
    else:
        rng = np.random.default_rng(hp.seed)
        model = Model.init(
            manifest.num_classes,
            feat_dim,
            rng,
            hidden_attention=hp.hidden_attention,
            hidden_relation=hp.hidden_relation,
            n_clips=hp.n_clips,
        )
        adam = AdamState.for_params(
            model.params(),
            learning_rate=hp.learning_rate,
            beta1=hp.adam_beta1,
            beta2=hp.adam_beta2,
            eps=hp.adam_eps,
        )
        start_epoch = 0

    metrics: list[dict] = []
    diverged = False
    last_good = _snapshot(model, adam, rng, start_epoch, hp)

    for epoch in range(start_epoch + 1, hp.epochs + 1):
        past_warmup = epoch > hp.warmup_epochs
        inter_now = hp.use_inter and hp.augment_factor > 0 and past_warmup
        videos: list[VideoRecord] = list(manifest.videos)
        if inter_now:
            pool = build_pool(manifest, model, hp.delta_inflate, hp.tau_att, hp.min_seg_len)
            extended = augment_training_set(
                manifest,
                pool,
                hp.augment_factor,
                rng,
                k_min=hp.k_min,
                k_max=hp.k_max,
                id_prefix=f"gen-e{epoch}",
            )
            videos = list(extended.videos)
        order = rng.permutation(len(videos))
        shuffled = [videos[i] for i in order]

        sums: dict[str, float] = {}
        n_batches = 0
        bad_loss = False
        for i in range(0, len(shuffled), hp.batch_size):
            batch = shuffled[i : i + hp.batch_size]
            with GradTape() as tape:
                loss, breakdown = total_loss(
                    batch, model, hp, rng, adv_active=past_warmup, inter_active=inter_now
                )
            if not np.isfinite(breakdown.total):
                bad_loss = True
                break
            grads_by_tensor = tape.backward(loss)
            named = {
                name: grads_by_tensor.get(tensor)
                for name, tensor in model.params().items()
            }
            adam_step(model.params(), named, adam)
            for key, value in breakdown.as_dict().items():
                sums[key] = sums.get(key, 0.0) + value
            n_batches += 1
        if bad_loss:
            _restore(model, adam, last_good)
            diverged = True
            break

        row = {"epoch": epoch}
        for key in ("total", "global", "local", "intra", "inter", "guide"):
            row[key] = sums.get(key, 0.0) / max(n_batches, 1)
        row["accuracy"] = classification_accuracy(
            val_manifest if val_manifest is not None else manifest, model, hp.pool_eps
        )
        metrics.append(row)
        last_good = _snapshot(model, adam, rng, epoch, hp)
        if on_epoch is not None:
            on_epoch(row)

    result = TrainResult(model=model, metrics=metrics, checkpoint=last_good, diverged=diverged)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(metrics, out_dir / "metrics.csv")
        ckpt_path = out_dir / "checkpoint.bin"
        save_checkpoint(result.checkpoint, ckpt_path)
        result.checkpoint_path = ckpt_path
        from . import plots

        plots.render_loss_curves(metrics, out_dir / "loss_curves.png")
    return result


def write_metrics_csv(metrics: list[dict], path: str | Path) -> None:
    """One row per epoch: every loss term plus accuracy."""
    import csv

    columns = ["epoch", "total", "global", "local", "intra", "inter", "guide", "accuracy"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in metrics:
            writer.writerow({k: row.get(k, "") for k in columns})


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

# (name, use_adv, use_intra, use_inter); guidance stays on throughout.
ABLATION_GRID: list[tuple[str, bool, bool, bool]] = [
    ("baseline", False, False, False),
    ("adv", True, False, False),
    ("adv+inter", True, False, True),
    ("adv+intra", True, True, False),
    ("full", True, True, True),
]


@dataclass
class AblationRow:
    name: str
    use_adv: bool
    use_intra: bool
    use_inter: bool
    thresholds: list[float]
    map_per_threshold: list[float]
    average_map: float
    accuracy: float


def ablate(
    train_manifest: DatasetManifest,
    eval_manifest: DatasetManifest,
    hp: Hyperparams,
    thresholds: list[float] | None = None,
    out_dir: str | Path | None = None,
    grid: list[tuple[str, bool, bool, bool]] | None = None,
    on_row=None,
) -> list[AblationRow]:
    """Train once per toggle configuration and evaluate localization quality.

    The default grid switches the three auxiliary mechanisms on/off in the
    standard five configurations from none to all. Writes ablation.csv and
    ablation.png when ``out_dir`` is given.
    """
    from .localize import decode_dataset, evaluate

    if thresholds is None:
        thresholds = [round(0.1 * k, 1) for k in range(1, 10)]
    rows: list[AblationRow] = []
    for name, use_adv, use_intra, use_inter in grid if grid is not None else ABLATION_GRID:
        hp_row = replace(hp, use_adv=use_adv, use_intra=use_intra, use_inter=use_inter)
        result = train(train_manifest, hp_row)
        detections = decode_dataset(eval_manifest, result.model, hp_row)
        report = evaluate(detections, eval_manifest, thresholds)
        row = AblationRow(
            name=name,
            use_adv=use_adv,
            use_intra=use_intra,
            use_inter=use_inter,
            thresholds=list(thresholds),
            map_per_threshold=list(report.map_per_threshold),
            average_map=report.average_map,
            accuracy=classification_accuracy(eval_manifest, result.model, hp.pool_eps),
        )
        rows.append(row)
        if on_row is not None:
            on_row(row)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_ablation_csv(rows, out_dir / "ablation.csv")
        from . import plots

        plots.render_ablation(rows, out_dir / "ablation.png")
    return rows


def _write_ablation_csv(rows: list[AblationRow], path: str | Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["config", "use_adv", "use_intra", "use_inter"]
        header += [f"map@{t:g}" for t in (rows[0].thresholds if rows else [])]
        header += ["average_map", "accuracy"]
        writer.writerow(header)
        for r in rows:
            writer.writerow(
                [r.name, int(r.use_adv), int(r.use_intra), int(r.use_inter)]
                + [f"{v:.6f}" for v in r.map_per_threshold]
                + [f"{r.average_map:.6f}", f"{r.accuracy:.6f}"]
            )
