"""Experiment orchestration: contiguous k-fold CV, autoencoder pretraining,
center initialization, one-class and semi-supervised main training, scoring,
metrics and repeated trials.

Within a trial the two models share the pretrained weights, the center and the
minibatch order; the objective is the only thing that differs. Everything is
seeded, so a fixed master seed gives bit-identical results single-threaded.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from . import evalx, nnet, objectives
from .data import Dataset
from .errors import ConfigError, DivergenceError
from .nnet import MlpModel
from .objectives import Hypersphere, LabeledBatch, SadHyper

MODES = ("svdd", "sad")

_DIVERGENCE_WINDOW = 100
_DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class FoldPlan:
    n_rows: int
    ranges: tuple[tuple[int, int], ...]  # contiguous [start, stop) per fold


def contiguous_kfold(n_rows: int, k: int) -> FoldPlan:
    """Split [0, n_rows) into k near-equal contiguous ranges (sizes differ by <= 1)."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if n_rows < k:
        raise ConfigError(f"n_rows={n_rows} < k={k}")
    base, extra = divmod(n_rows, k)
    ranges, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        ranges.append((start, start + size))
        start += size
    return FoldPlan(n_rows=n_rows, ranges=tuple(ranges))


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    pretrain_epochs: int = 20
    main_epochs: int = 90
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-6
    eta: float = 1.0
    dist_eps: float = 1e-6
    layer_dims: tuple[int, ...] = nnet.DEFAULT_DIMS
    min_labeled_per_batch: int = 1  # labeled oversampling floor for SAD batches
    k_folds: int = 3
    n_repeats: int = 2

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.main_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")

    def sad_hyper(self) -> SadHyper:
        return SadHyper(eta=self.eta, eps=self.dist_eps,
                        weight_decay=self.weight_decay)


def paper_scale(cfg: TrainConfig) -> TrainConfig:
    """Epoch counts at full scale: 1,000 pretrain, 10,000 main."""
    return replace(cfg, pretrain_epochs=1000, main_epochs=10_000)


def _check_divergence(losses: list[float], phase: str) -> None:
    cur = losses[-1]
    if not math.isfinite(cur):
        raise DivergenceError(f"{phase}: non-finite loss at epoch {len(losses)}")
    if len(losses) > _DIVERGENCE_WINDOW:
        ref = losses[-1 - _DIVERGENCE_WINDOW]
        if ref > 0 and cur > _DIVERGENCE_FACTOR * ref:
            raise DivergenceError(
                f"{phase}: loss grew {cur / ref:.1f}x over "
                f"{_DIVERGENCE_WINDOW} epochs (epoch {len(losses)})")


def pretrain(model: MlpModel, train_features: np.ndarray, cfg: TrainConfig,
             rng: np.random.Generator) -> tuple[MlpModel, list[float]]:
    """Autoencoder phase: minimize mean squared reconstruction error."""
    n = train_features.shape[0]
    losses: list[float] = []
    if cfg.pretrain_epochs == 0:
        return model, losses
    if model.input_dim != model.output_dim:
        raise ConfigError(
            f"autoencoder needs input dim == output dim, got "
            f"{model.input_dim} vs {model.output_dim}")
    trainer = nnet._FusedTrainer(model, cfg.batch_size)
    for _ in range(cfg.pretrain_epochs):
        perm = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            batch = train_features[perm[lo:lo + cfg.batch_size]]
            epoch_loss += trainer.grad_ae(batch)
            trainer.adam_apply(cfg.lr, cfg.weight_decay)
            n_batches += 1
        losses.append(epoch_loss / n_batches)
        _check_divergence(losses, "pretrain")
    return trainer.snapshot(), losses


def train_main(model: MlpModel, sphere: Hypersphere, unlabeled: np.ndarray,
               labeled: LabeledBatch, cfg: TrainConfig, mode: str,
               rng: np.random.Generator) -> tuple[MlpModel, list[float]]:
    """Hypersphere phase. mode="svdd" ignores labels entirely; mode="sad" mixes
    oversampled labeled rows into every batch (when any exist). With an empty
    labeled batch the two modes consume identical randomness and produce
    identical trajectories."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    n = unlabeled.shape[0]
    m = len(labeled) if mode == "sad" else 0
    hyper = cfg.sad_hyper()
    if m:
        m_b = max(cfg.min_labeled_per_batch,
                  math.ceil(cfg.batch_size * m / (n + m)))
    losses: list[float] = []
    if cfg.main_epochs == 0:
        return model, losses
    trainer = nnet._FusedTrainer(model, cfg.batch_size)
    if m:
        trainer.ensure_aux(m_b)
    center = sphere.center
    for _ in range(cfg.main_epochs):
        perm = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            batch = unlabeled[perm[lo:lo + cfg.batch_size]]
            if m:
                pick = rng.integers(0, m, size=m_b)
                total = batch.shape[0] + m_b
                loss = trainer.grad_center(batch, center, total)
                # labeled term of the semi-supervised loss, same arithmetic
                # as the standalone objective
                x_l = labeled.features[pick]
                out_l = trainer.forward_aux(x_l)
                diff_l = out_l - center
                d2 = np.sum(diff_l * diff_l, axis=1) + hyper.eps
                y = labeled.labels[pick]
                loss += float(hyper.eta / total * np.sum(d2 ** y))
                coeff = (hyper.eta / total) * y * d2 ** (y - 1.0)
                trainer.backward_aux_add(x_l, 2.0 * coeff[:, None] * diff_l)
            else:
                loss = trainer.grad_center(batch, center, batch.shape[0])
            trainer.adam_apply(cfg.lr, cfg.weight_decay)
            epoch_loss += loss
            n_batches += 1
        losses.append(epoch_loss / n_batches)
        _check_divergence(losses, f"main[{mode}]")
    return trainer.snapshot(), losses


def _forward_outputs(model: MlpModel, features: np.ndarray,
                     chunk: int = 8192) -> np.ndarray:
    out = np.empty((features.shape[0], model.output_dim))
    for lo in range(0, features.shape[0], chunk):
        out[lo:lo + chunk], _ = nnet.forward(model, features[lo:lo + chunk])
    return out


@dataclass
class TrialResult:
    report: evalx.TrialReport
    models: dict  # mode -> MlpModel
    sphere: Hypersphere
    normalizer: data_mod.Normalizer
    train_rows: np.ndarray  # global row indices
    test_rows: np.ndarray
    scores: dict  # (mode, split) -> np.ndarray aligned with train_rows/test_rows
    projections: dict  # (mode, split) -> (proj (N,2), is_labeled (N,) bool)
    pretrain_losses: list[float] = field(default_factory=list)
    main_losses: dict = field(default_factory=dict)  # mode -> list[float]


def run_trial(dataset: Dataset, cfg: TrainConfig, repeat: int, fold: int,
              plan: FoldPlan, modes=MODES,
              ground_truth_rows: np.ndarray | None = None) -> TrialResult:
    t0 = time.perf_counter()
    lo, hi = plan.ranges[fold]
    test_rows = np.arange(lo, hi)
    train_rows = np.concatenate(
        [np.arange(a, b) for i, (a, b) in enumerate(plan.ranges) if i != fold])

    norm = data_mod.fit_normalizer(dataset.features, train_rows,
                                   fitted_on=f"repeat{repeat}_fold{fold}")
    feats = data_mod.apply_normalizer(norm, dataset.features)

    labeled_global = dataset.labeled_idx
    labeled_train = labeled_global[np.isin(labeled_global, train_rows)]

    model0 = nnet.mlp_init([cfg.seed, repeat, fold, 0], cfg.layer_dims)
    rng_pre = np.random.default_rng([cfg.seed, repeat, fold, 1])
    pre_model, pre_losses = pretrain(model0, feats[train_rows], cfg, rng_pre)
    sphere = objectives.init_center(pre_model, feats[train_rows])

    sad_unlab_rows = train_rows[~np.isin(train_rows, labeled_train)]
    lb = LabeledBatch(feats[labeled_train], -np.ones(labeled_train.size))

    trial_no = repeat * len(plan.ranges) + fold + 1
    models, scores, projections, main_losses, metrics = {}, {}, {}, {}, {}
    for mode in modes:
        # same rng sub-seed for both modes: identical batch order, objective is
        # the only variable
        rng = np.random.default_rng([cfg.seed, repeat, fold, 2])
        unlab = feats[train_rows] if mode == "svdd" else feats[sad_unlab_rows]
        labeled = LabeledBatch.empty(feats.shape[1]) if mode == "svdd" else lb
        model, losses = train_main(pre_model, sphere, unlab, labeled, cfg,
                                   mode, rng)
        models[mode] = model
        main_losses[mode] = losses

        mode_metrics = {}
        for split, rows in (("train", train_rows), ("test", test_rows)):
            s = objectives.anomaly_score(model, feats[rows], sphere)
            scores[(mode, split)] = s
            lab_pos = np.nonzero(np.isin(rows, labeled_global))[0]
            ss = evalx.ScoreSet(s, lab_pos, split=split, model=mode)
            mode_metrics.update(evalx.metrics_for(ss))
            if ground_truth_rows is not None:
                gt_pos = np.nonzero(np.isin(rows, ground_truth_rows))[0]
                gt_ss = evalx.ScoreSet(s, gt_pos, split=split, model=mode)
                mode_metrics.update(
                    {f"gt_{k}": v for k, v in evalx.metrics_for(gt_ss).items()})
        metrics[mode] = mode_metrics

        if data_mod.fit_hook is not None:
            data_mod.fit_hook("pca", train_rows)
        basis = evalx.pca_fit(_forward_outputs(model, feats[train_rows]), k=2)
        for split, rows in (("train", train_rows), ("test", test_rows)):
            proj = evalx.pca_project(basis, _forward_outputs(model, feats[rows]))
            is_labeled = np.isin(rows, labeled_global)
            projections[(mode, split)] = (proj, is_labeled)

    report = evalx.TrialReport(
        trial=trial_no, fold=fold, repeat=repeat, metrics=metrics,
        runtime_s=time.perf_counter() - t0,
        config=dataclasses.asdict(cfg) | {"modes": list(modes)},
    )
    return TrialResult(report=report, models=models, sphere=sphere,
                       normalizer=norm, train_rows=train_rows,
                       test_rows=test_rows, scores=scores,
                       projections=projections, pretrain_losses=pre_losses,
                       main_losses=main_losses)


def _trial_worker(args) -> TrialResult:
    dataset, cfg, repeat, fold, plan, modes, gt_rows = args
    return run_trial(dataset, cfg, repeat, fold, plan, modes, gt_rows)


def run_experiment(dataset: Dataset, cfg: TrainConfig,
                   n_repeats: int | None = None, modes=MODES, jobs: int = 1,
                   ground_truth_rows: np.ndarray | None = None,
                   on_trial=None) -> list[TrialResult]:
    """All repeats x folds. `on_trial(result)` fires as each trial completes so
    callers can flush partial results before a later trial aborts."""
    if dataset.n_rows < cfg.k_folds:
        raise ConfigError("dataset smaller than fold count")
    n_repeats = cfg.n_repeats if n_repeats is None else n_repeats
    plan = contiguous_kfold(dataset.n_rows, cfg.k_folds)
    tasks = [(dataset, cfg, r, f, plan, tuple(modes), ground_truth_rows)
             for r in range(n_repeats) for f in range(cfg.k_folds)]
    results: list[TrialResult] = []
    if jobs <= 1:
        for task in tasks:
            res = _trial_worker(task)
            results.append(res)
            if on_trial is not None:
                on_trial(res)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            futures = [ex.submit(_trial_worker, t) for t in tasks]
            for fut in futures:
                res = fut.result()
                results.append(res)
                if on_trial is not None:
                    on_trial(res)
    results.sort(key=lambda r: r.report.trial)
    return results
