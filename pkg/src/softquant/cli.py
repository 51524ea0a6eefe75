"""Command-line interface.

Every RunConfig field is exposed as a ``--<field-name>`` flag (dashes
for underscores); flags override values read from ``--config``. Output
lands under the directory named by the SOFTQUANT_OUT environment
variable (default ./runs), in a per-run subdirectory.

Exit codes: 0 success, 2 configuration/input error, 3 numeric error,
4 refinement impossible, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import checkpoint, harness, landscape, reports, scaling
from .config import RunConfig, SweepSpec, format_config, load_config, save_config
from .errors import (
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_REFINEMENT,
    ConfigurationError,
    InputError,
    NumericError,
    RefinementImpossibleError,
)

OUT_ENV = "SOFTQUANT_OUT"


def _parse_bool(text: str) -> bool:
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _tuple_parser(element):
    def parse(text: str):
        return tuple(element(v.strip()) for v in text.split(",") if v.strip())

    return parse


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, dest=f.name, type=_parse_bool, default=None)
        elif f.type == "int":
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type == "float":
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        elif f.type.startswith("tuple"):
            element = int if "int" in f.type else float
            parser.add_argument(flag, dest=f.name, type=_tuple_parser(element), default=None)
        else:
            parser.add_argument(flag, dest=f.name, default=None)


def build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    if overrides:
        cfg = harness.with_overrides(cfg, **overrides)
    return cfg.validate()


def run_dir(cfg: RunConfig, default_name: str) -> str:
    root = os.environ.get(OUT_ENV, "runs")
    return os.path.join(root, cfg.out_dir or default_name)


def _prepare(cfg: RunConfig, name: str) -> str:
    d = run_dir(cfg, name)
    os.makedirs(d, exist_ok=True)
    save_config(os.path.join(d, "config.cfg"), cfg)
    return d


def cmd_pretrain(args) -> None:
    cfg = build_config(args)
    out = _prepare(cfg, f"pretrain-seed{cfg.seed}")
    result = harness.pretrain(cfg)
    checkpoint.save_checkpoint(os.path.join(out, "pretrained.sqck"), result.model)
    with open(os.path.join(out, "pretrain_history.csv"), "w") as f:
        f.write("epoch,train_loss,test_accuracy\n")
        for epoch, loss, acc in result.history:
            f.write(f"{epoch},{loss!r},{acc!r}\n")
    print(f"pretrained: test accuracy {result.test_accuracy:.2f}% -> {out}")


def cmd_softquant(args) -> None:
    cfg = build_config(args)
    out = _prepare(cfg, f"softquant-h{cfg.h}-w{cfg.w}-seed{cfg.seed}")
    pretrained = checkpoint.load_checkpoint(args.pretrained) if args.pretrained else None
    result = harness.run_pipeline(cfg, pretrained=pretrained)
    checkpoint.save_checkpoint(os.path.join(out, "pretrained.sqck"), result.pretrained)
    checkpoint.save_checkpoint(os.path.join(out, "softquant_raw.sqck"), result.softquant.model)
    checkpoint.save_checkpoint(os.path.join(out, "snapped_pre.sqck"), result.snapped_pre)
    maps = result.maps_post if result.maps_post is not None else result.maps_pre
    checkpoint.save_codebook(os.path.join(out, "codebook.sqcb"), list(maps.values()))
    if result.snapped_post is not None:
        checkpoint.save_checkpoint(os.path.join(out, "snapped_post.sqck"), result.snapped_post)
    reports.emit_reports(result, out)
    post = result.report_post
    if post is not None:
        print(
            f"soft quantization: b_bar {post.b_bar:.3f} bits, "
            f"delta accuracy {post.delta_accuracy:.2f} pp -> {out}"
        )
    else:
        print(
            f"soft quantization: refinement failed ({result.refine_error}); "
            f"pre-refinement b_bar {result.report_pre.b_bar:.3f} bits -> {out}"
        )
        raise RefinementImpossibleError(result.refine_error)


def cmd_heq(args) -> None:
    cfg = build_config(args)
    out = _prepare(cfg, f"heq-{cfg.heq_bits}bit-seed{cfg.seed}")
    if args.pretrained:
        pretrained = checkpoint.load_checkpoint(args.pretrained)
    else:
        pretrained = harness.pretrain(cfg).model
    _, test = harness.load_dataset(cfg)
    _, pre_acc = harness.evaluate(pretrained, test)
    model, maps = harness.heq_model(pretrained, cfg.heq_bits)
    _, acc = harness.evaluate(model, test)
    from .quantize import accuracy_degradation, bit_widths

    report = bit_widths(
        list(maps.values()), refined=False, delta_accuracy=accuracy_degradation(pre_acc, acc)
    )
    checkpoint.save_checkpoint(os.path.join(out, "heq.sqck"), model)
    checkpoint.save_codebook(os.path.join(out, "heq.sqcb"), list(maps.values()))
    print(
        f"heq {cfg.heq_bits}-bit: b_bar {report.b_bar:.3f} bits, "
        f"delta accuracy {report.delta_accuracy:.2f} pp -> {out}"
    )


def cmd_refine(args) -> None:
    from .quantize import RefineConfig, bit_widths, identify_clusters, refine_clusters

    cfg = build_config(args)
    out = _prepare(cfg, f"refine-seed{cfg.seed}")
    model = checkpoint.load_checkpoint(args.checkpoint)
    maps = {
        l.spec.name: identify_clusters(l.weights.ravel(), cfg.precision_bits, l.spec.name)
        for l in model.coupled_layers()
    }
    refined = {
        name: refine_clusters(m, RefineConfig(n_min=cfg.n_min)) for name, m in maps.items()
    }
    snapped = harness.snap_model(model, refined)
    checkpoint.save_checkpoint(os.path.join(out, "snapped_post.sqck"), snapped)
    checkpoint.save_codebook(os.path.join(out, "codebook.sqcb"), list(refined.values()))
    pre = bit_widths(list(maps.values()))
    post = bit_widths(list(refined.values()), refined=True)
    print(f"refined: b_bar {pre.b_bar:.3f} -> {post.b_bar:.3f} bits -> {out}")


def cmd_report(args) -> None:
    report = reports.load_run_report_json(os.path.join(args.run_dir, "run_report.json"))
    for stage in ("pre_refinement", "post_refinement", "heq"):
        block = report.get(stage)
        if block is None:
            print(f"{stage}: (missing)")
            continue
        print(
            f"{stage}: b_bar {block['b_bar']:.3f} bits, "
            f"delta accuracy {block['delta_accuracy']:.2f} pp"
        )
    if report.get("refine_error"):
        print(f"refinement error: {report['refine_error']}")


def cmd_perturb(args) -> None:
    cfg = build_config(args)
    out = _prepare(cfg, f"perturb-seed{cfg.seed}")
    pre = checkpoint.load_checkpoint(args.pretrained)
    compressed = checkpoint.load_checkpoint(args.compressed)
    train, test = harness.load_dataset(cfg)
    eval_ds = train if cfg.perturb_on_train else test
    report = landscape.perturbation_study(
        pre, compressed, eval_ds.x, eval_ds.y, cfg.perturb_samples, cfg.seed
    )
    reports.write_perturbation_csv(os.path.join(out, "perturbation.csv"), report)
    print(
        f"perturbation study: slope {report.slope:.6f}, "
        f"percentile rank {report.percentile_rank:.1f}% -> {out}"
    )


def cmd_sweep(args) -> None:
    cfg = build_config(args)
    out = _prepare(cfg, f"sweep-seed{cfg.seed}")
    spec = SweepSpec(h_values=args.h_values, w_values=args.w_values, repeats=args.repeats)
    result = harness.sweep(spec, cfg)
    reports.emit_reports(result, out)
    dominating = result.envelope()
    print(f"sweep: {len(result.cells)} cells, {len(dominating)} dominate the baseline -> {out}")
    for c in dominating:
        print(
            f"  h={c.h} w={c.w}: b_bar {c.mean_bitwidth:.3f} bits, "
            f"delta accuracy {c.mean_delta_acc:.2f} pp (heq {c.mean_heq_delta_acc:.2f} pp)"
        )


def cmd_scaling(args) -> None:
    cfg = build_config(args)
    out = _prepare(cfg, f"scaling-seed{cfg.seed}")
    if args.checkpoint:
        model = checkpoint.load_checkpoint(args.checkpoint)
    else:
        model = harness.pretrain(cfg).model
    stats = [
        scaling.layer_stats(l.weights.ravel(), l.spec.name) for l in model.coupled_layers()
    ]
    params = scaling.derive_params(stats, h=max(cfg.h, 1e-12), w=cfg.w, alpha=cfg.alpha)
    points = scaling.extensive_potential(model, params)
    fit = scaling.fit_power_law([(p.n, p.energy) for p in points])
    scaling.write_scaling_csv(os.path.join(out, "scaling.csv"), points, fit)
    print(f"scaling fit: exponent {fit.exponent:.3f}, mse {fit.mse:.4f} -> {out}")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softquant",
        description="Soft quantization of small neural networks via weight coupling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.set_defaults(func=func)
        return p

    add("pretrain", cmd_pretrain, "train a model on the task loss alone")

    p = add("softquant", cmd_softquant, "run the full soft-quantization pipeline")
    p.add_argument("--pretrained", help="checkpoint to fine-tune instead of pretraining")

    p = add("heq", cmd_heq, "equal-count quantization baseline")
    p.add_argument("--pretrained", help="checkpoint to quantize")

    p = add("refine", cmd_refine, "re-identify and refine clusters of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="soft-quantized raw checkpoint")

    p = sub.add_parser("report", help="summarize a completed run directory")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = add("perturb", cmd_perturb, "loss-slope perturbation study")
    p.add_argument("--pretrained", required=True)
    p.add_argument("--compressed", required=True)

    p = add("sweep", cmd_sweep, "(h, w) grid sweep with repeats")
    p.add_argument("--h-values", type=_tuple_parser(float), required=True)
    p.add_argument("--w-values", type=_tuple_parser(float), required=True)
    p.add_argument("--repeats", type=int, default=15)

    p = add("scaling", cmd_scaling, "extensive-potential power law of a pretrained model")
    p.add_argument("--checkpoint", help="pretrained checkpoint (otherwise pretrains)")

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except RefinementImpossibleError as e:
        print(f"error: refinement impossible: {e}", file=sys.stderr)
        return EXIT_REFINEMENT
    except NumericError as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
