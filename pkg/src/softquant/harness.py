"""End-to-end pipeline: pretraining, coupled fine-tuning, cluster
extraction, refinement, the HEQ baseline, and (h, w) grid sweeps.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import RunConfig, SweepSpec, with_overrides
from .coupling import (
    CouplingSchedule,
    TriangularWell,
    build_histogram,
    compression_force,
    coupling_loss_estimate,
    default_schedule,
    effective_potential,
    sample_fraction_at,
)
from .data import Dataset, load_image_pair, make_blobs
from .errors import (
    ConfigurationError,
    NumericError,
    RefinementImpossibleError,
    SoftQuantError,
)
from .quantize import (
    ClusterMap,
    QuantizationReport,
    RefineConfig,
    accuracy_degradation,
    bit_widths,
    heq_quantize,
    identify_clusters,
    refine_clusters,
    snap_to_clusters,
)
from .scaling import CouplingParams, derive_params, layer_stats

# rng stream tags (combined with the run seed)
STREAM_INIT = 0
STREAM_PRETRAIN_BATCHES = 3
STREAM_SOFTQUANT_BATCHES = 4
STREAM_HISTOGRAM = 5


def load_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Train/test splits per the config's dataset spec."""
    cfg.validate()
    if cfg.dataset == "blobs":
        image_side = 0
        if cfg.arch == "cnn":
            side = int(round(np.sqrt(cfg.blob_dim)))
            if side * side != cfg.blob_dim:
                raise ConfigurationError(
                    f"cnn on blobs needs a square blob_dim, got {cfg.blob_dim}"
                )
            image_side = side
        return make_blobs(
            classes=cfg.blob_classes,
            dim=cfg.blob_dim,
            n_train=cfg.blob_train,
            n_test=cfg.blob_test,
            separation=cfg.blob_separation,
            seed=cfg.seed,
            label_noise=cfg.blob_label_noise,
            image_side=image_side,
        )
    train = load_image_pair(cfg.train_images, cfg.train_labels)
    test = load_image_pair(cfg.test_images, cfg.test_labels)
    if train.num_classes != test.num_classes:
        raise ConfigurationError("train/test class counts differ")
    return train, test


def build_layer_specs(cfg: RunConfig, train: Dataset) -> list[nn.LayerSpec]:
    classes = train.num_classes
    if cfg.arch == "mlp":
        in_dim = int(np.prod(train.x.shape[1:]))
        dims = [in_dim, *cfg.hidden, classes]
        specs = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            specs.append(
                nn.LayerSpec(
                    name="out" if last else f"dense{i + 1}",
                    kind="dense",
                    fan_in=dims[i],
                    fan_out=dims[i + 1],
                    activation="none" if last else "relu",
                )
            )
        return specs
    if train.x.ndim != 4:
        raise ConfigurationError("cnn needs (n, c, h, w) inputs")
    _, c, hgt, wid = train.x.shape
    specs = []
    for i, out_c in enumerate(cfg.conv_channels):
        specs.append(
            nn.LayerSpec(
                name=f"conv{i + 1}",
                kind="conv2d",
                fan_in=c,
                fan_out=out_c,
                kernel=cfg.kernel_size,
            )
        )
        c = out_c
        hgt -= cfg.kernel_size - 1
        wid -= cfg.kernel_size - 1
        if hgt < 1 or wid < 1:
            raise ConfigurationError("conv stack exhausts the spatial extent")
    specs.append(
        nn.LayerSpec(name="dense1", kind="dense", fan_in=c * hgt * wid, fan_out=cfg.conv_hidden)
    )
    specs.append(
        nn.LayerSpec(
            name="out", kind="dense", fan_in=cfg.conv_hidden, fan_out=classes, activation="none"
        )
    )
    return specs


def evaluate(model: nn.ModelState, ds: Dataset) -> tuple[float, float]:
    """(cross-entropy, accuracy %) over the full split."""
    logits = nn.forward(model, ds.x)
    return nn.cross_entropy(logits, ds.y), float(
        100.0 * np.mean(logits.argmax(axis=1) == ds.y)
    )


def _minibatches(n: int, batch_size: int, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class PretrainResult:
    model: nn.ModelState
    test_accuracy: float
    history: list[tuple[int, float, float]]  # (epoch, train_loss, test_acc)


def pretrain(cfg: RunConfig, data: tuple[Dataset, Dataset] | None = None) -> PretrainResult:
    """Train a fresh model on the task loss alone."""
    cfg.validate()
    train, test = data if data is not None else load_dataset(cfg)
    specs = build_layer_specs(cfg, train)
    model = nn.init_model(specs, seed_from(cfg.seed, STREAM_INIT))
    batch_rng = np.random.default_rng([cfg.seed, STREAM_PRETRAIN_BATCHES])
    history = []
    for epoch in range(cfg.pretrain_epochs):
        for idx in _minibatches(len(train), cfg.batch_size, batch_rng):
            loss, grads = nn.loss_and_gradient(model, train.x[idx], train.y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"pretraining diverged at epoch {epoch}: loss={loss}")
            nn.sgd_nesterov_step(model, grads, cfg.pretrain_lr, cfg.momentum)
        train_loss, _ = evaluate(model, train)
        _, test_acc = evaluate(model, test)
        history.append((epoch, train_loss, test_acc))
    _, acc = evaluate(model, test)
    return PretrainResult(model=model, test_accuracy=acc, history=history)


def seed_from(master: int, *path: int) -> int:
    """Stable derived seed for an rng stream or sub-run."""
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


@dataclass
class StepLog:
    step: int
    epoch: int
    task: float
    coupling: float
    total: float


@dataclass
class LossBreakdown:
    task: float
    coupling: float

    @property
    def total(self) -> float:
        return self.task + self.coupling


@dataclass
class EpochSummary:
    epoch: int
    fraction: float
    train_task_loss: float
    cluster_counts: dict[str, int]


@dataclass
class SoftQuantResult:
    model: nn.ModelState
    params: CouplingParams
    initial_task_loss: float
    steps: list[StepLog]
    epochs: list[EpochSummary]


def soft_quantize(
    pretrained: nn.ModelState, cfg: RunConfig, data: tuple[Dataset, Dataset] | None = None
) -> SoftQuantResult:
    """Fine-tune with per-layer compression forces injected into SGD.

    Per step and coupled layer: histogram the current weights at the
    scheduled sampling fraction, convolve into the effective potential,
    and add h_l * dV/dtheta (bin-midpoint lookup) to the task gradient
    before the Nesterov update. Interaction scales are frozen at the
    pretrained state.
    """
    cfg.validate()
    train, test = data if data is not None else load_dataset(cfg)
    model = pretrained.copy()
    for layer in model.layers:
        layer.velocity[:] = 0.0
        if layer.bias_velocity is not None:
            layer.bias_velocity[:] = 0.0

    stats = [layer_stats(l.weights.ravel(), l.spec.name) for l in model.coupled_layers()]
    params = derive_params(stats, h=cfg.h, w=cfg.w, alpha=cfg.alpha) if cfg.h > 0 else None
    schedule = default_schedule(cfg.f0, cfg.epochs)
    if cfg.epoch_full > 0:
        schedule = CouplingSchedule(
            f0=cfg.f0, epoch_full=cfg.epoch_full, total_epochs=cfg.epochs
        )

    batch_rng = np.random.default_rng([cfg.seed, STREAM_SOFTQUANT_BATCHES])
    hist_rng = np.random.default_rng([cfg.seed, STREAM_HISTOGRAM])
    initial_task_loss, _ = evaluate(model, train)

    steps: list[StepLog] = []
    epoch_logs: list[EpochSummary] = []
    cached: dict[str, tuple] = {}
    step_count = 0
    for epoch in range(cfg.epochs):
        fraction = sample_fraction_at(schedule, epoch)
        for idx in _minibatches(len(train), cfg.batch_size, batch_rng):
            task_loss, grads = nn.loss_and_gradient(model, train.x[idx], train.y[idx])
            if not np.isfinite(task_loss):
                raise NumericError(
                    f"fine-tuning diverged at step {step_count} (epoch {epoch})"
                )
            coupling_total = 0.0
            if params is not None:
                refresh = step_count % cfg.histogram_stride == 0
                for layer in model.coupled_layers():
                    lc = params.for_layer(layer.spec.name)
                    if lc is None:
                        continue
                    flat = layer.weights.ravel()
                    if refresh or layer.spec.name not in cached:
                        hist = build_histogram(flat, cfg.n_bins, fraction, hist_rng)
                        pot = effective_potential(hist, TriangularWell(lc.w_l))
                        cached[layer.spec.name] = (hist, pot)
                    hist, pot = cached[layer.spec.name]
                    force = compression_force(pot, hist, flat, lc.h_l)
                    grads.weights[layer.spec.name] += force.reshape(layer.weights.shape)
                    coupling_total += coupling_loss_estimate(pot, hist, lc.h_l)
            breakdown = LossBreakdown(task=task_loss, coupling=coupling_total)
            steps.append(
                StepLog(
                    step=step_count,
                    epoch=epoch,
                    task=breakdown.task,
                    coupling=breakdown.coupling,
                    total=breakdown.total,
                )
            )
            nn.sgd_nesterov_step(model, grads, cfg.lr, cfg.momentum)
            step_count += 1
        train_task_loss, _ = evaluate(model, train)
        counts = {
            l.spec.name: identify_clusters(l.weights.ravel(), cfg.precision_bits, l.spec.name).k
            for l in model.coupled_layers()
        }
        epoch_logs.append(
            EpochSummary(
                epoch=epoch,
                fraction=fraction,
                train_task_loss=train_task_loss,
                cluster_counts=counts,
            )
        )
    return SoftQuantResult(
        model=model,
        params=params,
        initial_task_loss=initial_task_loss,
        steps=steps,
        epochs=epoch_logs,
    )


def snap_model(model: nn.ModelState, maps: dict[str, ClusterMap]) -> nn.ModelState:
    out = model.copy()
    for layer in out.layers:
        cmap = maps.get(layer.spec.name)
        if cmap is not None:
            layer.weights[:] = snap_to_clusters(layer.weights.ravel(), cmap).reshape(
                layer.weights.shape
            )
    return out


def heq_model(
    pretrained: nn.ModelState, bits: int
) -> tuple[nn.ModelState, dict[str, ClusterMap]]:
    """Equal-count baseline applied to every coupled weight tensor."""
    out = pretrained.copy()
    maps = {}
    for layer in out.layers:
        if not layer.spec.couple:
            continue
        snapped, cmap = heq_quantize(layer.weights.ravel(), bits, layer.spec.name)
        layer.weights[:] = snapped.reshape(layer.weights.shape)
        maps[layer.spec.name] = cmap
    return out, maps


@dataclass
class PipelineResult:
    config: RunConfig
    pretrain_accuracy: float
    pretrained: nn.ModelState
    softquant: SoftQuantResult
    maps_pre: dict[str, ClusterMap]
    maps_post: dict[str, ClusterMap] | None
    snapped_pre: nn.ModelState
    snapped_post: nn.ModelState | None
    report_pre: QuantizationReport
    report_post: QuantizationReport | None
    refine_error: str | None
    heq_report: QuantizationReport
    heq: nn.ModelState
    pretrain_history: list[tuple[int, float, float]] = field(default_factory=list)


def run_pipeline(cfg: RunConfig, pretrained: nn.ModelState | None = None) -> PipelineResult:
    """Full soft-quantization procedure on one configuration.

    Pretrain (or take a checkpointed model), fine-tune with coupling,
    identify clusters, snap, refine, and quantify accuracy degradation
    for both stages plus the equal-count baseline. A refinement failure
    is recorded while the pre-refinement results stand.
    """
    cfg.validate()
    data = load_dataset(cfg)
    _, test = data
    history = []
    if pretrained is None:
        pre = pretrain(cfg, data)
        pretrained = pre.model
        history = pre.history
    _, pre_acc = evaluate(pretrained, test)

    sq = soft_quantize(pretrained, cfg, data)
    maps_pre = {
        l.spec.name: identify_clusters(l.weights.ravel(), cfg.precision_bits, l.spec.name)
        for l in sq.model.coupled_layers()
    }
    snapped_pre = snap_model(sq.model, maps_pre)
    _, acc_pre_refine = evaluate(snapped_pre, test)
    report_pre = bit_widths(
        list(maps_pre.values()),
        refined=False,
        delta_accuracy=accuracy_degradation(pre_acc, acc_pre_refine),
    )

    maps_post = None
    snapped_post = None
    report_post = None
    refine_error = None
    try:
        refine_cfg = RefineConfig(n_min=cfg.n_min)
        maps_post = {name: refine_clusters(m, refine_cfg) for name, m in maps_pre.items()}
        snapped_post = snap_model(sq.model, maps_post)
        _, acc_post = evaluate(snapped_post, test)
        report_post = bit_widths(
            list(maps_post.values()),
            refined=True,
            delta_accuracy=accuracy_degradation(pre_acc, acc_post),
        )
    except RefinementImpossibleError as e:
        refine_error = str(e)

    heq, heq_maps = heq_model(pretrained, cfg.heq_bits)
    _, heq_acc = evaluate(heq, test)
    heq_report = bit_widths(
        list(heq_maps.values()),
        refined=False,
        delta_accuracy=accuracy_degradation(pre_acc, heq_acc),
    )

    return PipelineResult(
        config=cfg,
        pretrain_accuracy=pre_acc,
        pretrained=pretrained,
        softquant=sq,
        maps_pre=maps_pre,
        maps_post=maps_post,
        snapped_pre=snapped_pre,
        snapped_post=snapped_post,
        report_pre=report_pre,
        report_post=report_post,
        refine_error=refine_error,
        heq_report=heq_report,
        heq=heq,
        pretrain_history=history,
    )


@dataclass
class RunOutcome:
    """Scalar summary of one sweep run."""

    h: float
    w: float
    repeat: int
    seed: int
    failed: bool
    error: str = ""
    pretrain_accuracy: float = float("nan")
    bitwidth_pre: float = float("nan")
    bitwidth_post: float = float("nan")
    delta_acc_pre: float = float("nan")
    delta_acc_post: float = float("nan")
    delta_acc_heq: float = float("nan")
    refine_failed: bool = False


@dataclass
class SweepCell:
    h: float
    w: float
    n_runs: int
    n_failures: int
    mean_delta_acc: float
    std_delta_acc: float
    cv_delta_acc: float
    mean_bitwidth: float
    std_bitwidth: float
    cv_bitwidth: float
    mean_heq_delta_acc: float
    dominates_heq: bool


@dataclass
class SweepResult:
    spec: SweepSpec
    heq_bits: int
    outcomes: list[RunOutcome]
    cells: list[SweepCell]

    def envelope(self) -> list[SweepCell]:
        return [c for c in self.cells if c.dominates_heq]


def _run_sweep_cell(args) -> RunOutcome:
    cfg, h, w, ih, iw, repeat, master = args
    seed = seed_from(master, ih, iw, repeat)
    run_cfg = with_overrides(cfg, h=h, w=w, seed=seed, out_dir="")
    outcome = RunOutcome(h=h, w=w, repeat=repeat, seed=seed, failed=False)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = run_pipeline(run_cfg)
    except SoftQuantError as e:
        outcome.failed = True
        outcome.error = f"{type(e).__name__}: {e}"
        return outcome
    outcome.pretrain_accuracy = result.pretrain_accuracy
    outcome.bitwidth_pre = result.report_pre.b_bar
    outcome.delta_acc_pre = result.report_pre.delta_accuracy
    outcome.delta_acc_heq = result.heq_report.delta_accuracy
    if result.report_post is not None:
        outcome.bitwidth_post = result.report_post.b_bar
        outcome.delta_acc_post = result.report_post.delta_accuracy
    else:
        outcome.refine_failed = True
        outcome.failed = True
        outcome.error = f"RefinementImpossibleError: {result.refine_error}"
    return outcome


def _cv(std: float, mean: float) -> float:
    # flagged as nan when the mean vanishes
    return std / mean if mean != 0.0 else float("nan")


def sweep(spec: SweepSpec, cfg: RunConfig) -> SweepResult:
    """repeats x |grid| pipeline runs with per-cell derived seeds.

    Cell statistics aggregate the successful runs; failures (including
    refinement-impossible runs) are counted per cell and the sweep
    continues. A cell dominates the equal-count baseline when its mean
    post-refinement bit-width is at or below heq_bits and its mean
    accuracy degradation does not exceed the baseline's on the same
    pretrained models.
    """
    cfg.validate()
    jobs = [
        (cfg, h, w, ih, iw, r, cfg.seed)
        for ih, h in enumerate(spec.h_values)
        for iw, w in enumerate(spec.w_values)
        for r in range(spec.repeats)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_sweep_cell, jobs, chunksize=1))
    else:
        outcomes = [_run_sweep_cell(j) for j in jobs]

    cells = []
    by_cell: dict[tuple[float, float], list[RunOutcome]] = {}
    for o in outcomes:
        by_cell.setdefault((o.h, o.w), []).append(o)
    for h in spec.h_values:
        for w in spec.w_values:
            runs = by_cell[(h, w)]
            ok = [o for o in runs if not o.failed]
            failures = len(runs) - len(ok)
            if ok:
                da = np.array([o.delta_acc_post for o in ok])
                bb = np.array([o.bitwidth_post for o in ok])
                hq = np.array([o.delta_acc_heq for o in ok])
                mean_da, std_da = float(da.mean()), float(da.std())
                mean_bb, std_bb = float(bb.mean()), float(bb.std())
                mean_hq = float(hq.mean())
                dominates = mean_bb <= cfg.heq_bits and mean_da <= mean_hq
            else:
                mean_da = std_da = mean_bb = std_bb = mean_hq = float("nan")
                dominates = False
            cells.append(
                SweepCell(
                    h=h,
                    w=w,
                    n_runs=len(runs),
                    n_failures=failures,
                    mean_delta_acc=mean_da,
                    std_delta_acc=std_da,
                    cv_delta_acc=_cv(std_da, mean_da),
                    mean_bitwidth=mean_bb,
                    std_bitwidth=std_bb,
                    cv_bitwidth=_cv(std_bb, mean_bb),
                    mean_heq_delta_acc=mean_hq,
                    dominates_heq=dominates,
                )
            )
    return SweepResult(spec=spec, heq_bits=cfg.heq_bits, outcomes=outcomes, cells=cells)
