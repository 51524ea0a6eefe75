"""Deterministic CSV/JSON report writers.

Floats are rendered with repr (shortest round-trip form) and JSON keys
are sorted, so identical inputs always serialize to identical bytes.
Schemas are documented in docs/FORMATS.md.
"""

from __future__ import annotations

import csv
import json
import os

from .harness import PipelineResult, SweepResult
from .landscape import PerturbationReport
from .quantize import QuantizationReport


def _f(x) -> str:
    return repr(float(x))


def write_loss_curve_csv(path, result: PipelineResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "epoch", "task_loss", "coupling_loss", "total_loss"])
        for s in result.softquant.steps:
            writer.writerow([s.step, s.epoch, _f(s.task), _f(s.coupling), _f(s.total)])


def write_epoch_csv(path, result: PipelineResult) -> None:
    layers = [l.spec.name for l in result.softquant.model.coupled_layers()]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["epoch", "sample_fraction", "train_task_loss"] + [f"k_{n}" for n in layers]
        )
        for e in result.softquant.epochs:
            writer.writerow(
                [e.epoch, _f(e.fraction), _f(e.train_task_loss)]
                + [e.cluster_counts[n] for n in layers]
            )


def write_quantization_csv(path, result: PipelineResult) -> None:
    pre = {m.layer: m for m in result.maps_pre.values()}
    post = {m.layer: m for m in (result.maps_post or {}).values()}
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "n", "k_pre", "k_post", "b_pre", "b_post"])
        for name, m in pre.items():
            p = post.get(name)
            writer.writerow(
                [
                    name,
                    m.n,
                    m.k,
                    p.k if p else "",
                    _f(m.bits),
                    _f(p.bits) if p else "",
                ]
            )


def _report_dict(report: QuantizationReport | None):
    if report is None:
        return None
    return {
        "per_layer": [
            {"layer": layer, "k": k, "bits": bits} for layer, k, bits in report.per_layer
        ],
        "b_bar": report.b_bar,
        "refined": report.refined,
        "delta_accuracy": report.delta_accuracy,
    }


def run_report_dict(result: PipelineResult) -> dict:
    return {
        "config": {"h": result.config.h, "w": result.config.w, "seed": result.config.seed},
        "pretrain_accuracy": result.pretrain_accuracy,
        "pre_refinement": _report_dict(result.report_pre),
        "post_refinement": _report_dict(result.report_post),
        "refine_error": result.refine_error,
        "heq": _report_dict(result.heq_report),
        "heq_bits": result.config.heq_bits,
    }


def write_run_report_json(path, result: PipelineResult) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(run_report_dict(result), f, sort_keys=True, indent=2)
        f.write("\n")


def load_run_report_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


SWEEP_COLUMNS = [
    "h",
    "w",
    "n_runs",
    "n_failures",
    "mean_delta_acc",
    "std_delta_acc",
    "cv_delta_acc",
    "mean_bitwidth",
    "std_bitwidth",
    "cv_bitwidth",
    "mean_heq_delta_acc",
    "dominates_heq",
]


def write_sweep_csv(path, result: SweepResult | None) -> None:
    """Grid statistics; an empty sweep still writes the header row."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        if result is None:
            return
        for c in result.cells:
            writer.writerow(
                [
                    _f(c.h),
                    _f(c.w),
                    c.n_runs,
                    c.n_failures,
                    _f(c.mean_delta_acc),
                    _f(c.std_delta_acc),
                    _f(c.cv_delta_acc),
                    _f(c.mean_bitwidth),
                    _f(c.std_bitwidth),
                    _f(c.cv_bitwidth),
                    _f(c.mean_heq_delta_acc),
                    int(c.dominates_heq),
                ]
            )


def write_sweep_runs_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "h",
                "w",
                "repeat",
                "seed",
                "failed",
                "error",
                "pretrain_accuracy",
                "bitwidth_pre",
                "bitwidth_post",
                "delta_acc_pre",
                "delta_acc_post",
                "delta_acc_heq",
            ]
        )
        for o in result.outcomes:
            writer.writerow(
                [
                    _f(o.h),
                    _f(o.w),
                    o.repeat,
                    o.seed,
                    int(o.failed),
                    o.error,
                    _f(o.pretrain_accuracy),
                    _f(o.bitwidth_pre),
                    _f(o.bitwidth_post),
                    _f(o.delta_acc_pre),
                    _f(o.delta_acc_post),
                    _f(o.delta_acc_heq),
                ]
            )


def write_perturbation_csv(path, report: PerturbationReport) -> None:
    """One row per random sample plus a summary row for the compressed model."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "sample", "delta_theta", "delta_loss", "slope"])
        d = report.delta_theta_total
        for i, s in enumerate(report.random_slopes):
            writer.writerow(["random", i, _f(d), _f(s * d), _f(s)])
        writer.writerow(
            ["compressed", "", _f(d), _f(report.delta_task_loss), _f(report.slope)]
        )


def emit_reports(result, out_dir) -> list[str]:
    """Write the report files appropriate to the artifact type."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    if isinstance(result, PipelineResult):
        write_run_report_json(path("run_report.json"), result)
        write_quantization_csv(path("quantization.csv"), result)
        write_loss_curve_csv(path("loss_curve.csv"), result)
        write_epoch_csv(path("epochs.csv"), result)
    elif isinstance(result, SweepResult):
        write_sweep_csv(path("sweep.csv"), result)
        write_sweep_runs_csv(path("sweep_runs.csv"), result)
    elif isinstance(result, PerturbationReport):
        write_perturbation_csv(path("perturbation.csv"), result)
    else:
        raise TypeError(f"no report writer for {type(result).__name__}")
    return written
