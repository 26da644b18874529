"""Command-line entry point: ``pedintent {gen,train,eval,bench,ablate,demo}``.

Every command resolves a preset, an optional JSON ``--config`` file and
``--set section.key=value`` flags into one validated run configuration, and
writes it to ``effective_config.json`` in its output directory.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pedintent.config import PRESETS, RunConfig
from pedintent.errors import BenchmarkError, ConfigError, NumericError

log = logging.getLogger("pedintent")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs: list[str], args) -> dict:
    out: dict = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError("--set", f"expected section.key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        out.setdefault("train", {})["seed"] = args.seed
        out.setdefault("world", {})["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        out.setdefault("train", {})["epochs"] = args.epochs
    return out


def _run_config(args) -> RunConfig:
    return RunConfig.from_preset(args.preset, args.config, _overrides(args.set, args))


def _out_dir(args, rc: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(rc.to_json())
    return out


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    from pedintent.scenario_gen import dataset_build

    rc = _run_config(args)
    out = _out_dir(args, rc)
    ds = rc.raw["dataset"]
    n_train = args.n_train if args.n_train is not None else ds["n_train"]
    n_test = args.n_test if args.n_test is not None else ds["n_test"]
    manifest = dataset_build(rc.world, n_train, n_test, out, rc.ped_count_weights)
    grid = rc.grid
    manifest_path = out / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    doc["grid"] = grid.to_dict()
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    s = manifest["stats"]
    print(
        f"wrote {n_train} train / {n_test} test sequences to {out}; "
        f"grid {grid.H}x{grid.W}, A={grid.A}, t={rc.world.seq_len}; "
        f"train crosser fraction {s['train']['crosser_fraction']:.3f}, "
        f"mean pedestrians/frame {s['train']['mean_peds_per_frame']:.2f}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    from pedintent.eval_bench.report import plot_losses
    from pedintent.training import TrainConfig, train, train_sequential

    rc = _run_config(args)
    if args.regime == "auxiliary_frozen" and not args.detector_checkpoint:
        raise ConfigError("detector_checkpoint", "auxiliary_frozen needs --detector-checkpoint")
    cfg = TrainConfig.from_run_config(rc, args.regime).validate(args.detector_checkpoint)
    out = _out_dir(args, rc)
    if args.regime == "sequential":
        run = train_sequential(args.data, cfg, rc, out)
    else:
        run = train(args.regime, args.data, cfg, rc, out, args.detector_checkpoint, args.tap_layer)
    if args.plots:
        (out / "plots").mkdir(exist_ok=True)
        plot_losses(run.epoch_losses, out / "plots" / "loss.png")
    last = run.epoch_losses[-1]
    print(f"{args.regime}: {len(run.epoch_losses)} epochs in {run.wall_s:.1f}s, final loss {last['total']:.4f}; checkpoint {run.checkpoint}")
    if run.detector_hash_before is not None:
        print(f"detector hash before {run.detector_hash_before[:16]} after {run.detector_hash_after[:16]}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from pedintent.eval_bench.metrics import detection_map
    from pedintent.eval_bench.report import plot_pr_curves, write_report
    from pedintent.training import evaluate_model, load_model, load_split

    rc = _run_config(args)
    out = _out_dir(args, rc)
    model, meta = load_model(args.checkpoint)
    ev = rc.raw["eval"]
    data = load_split(args.data, args.split, rc.grid)
    bundle = evaluate_model(model, data, rc.grid, ev["conf_threshold"], ev["nms_iou"], tuple(ev["height_filters"]))
    body = {"checkpoint": str(args.checkpoint), "regime": meta.get("regime"), "split": args.split, "metrics": bundle.to_dict()}
    if args.baseline:
        body["sequential"] = _eval_sequential(args.baseline, model, data, rc)
    write_report(out, "eval", body)
    if args.plots:
        from pedintent.grid_codec import decode_predictions
        import torch

        dets = []
        with torch.no_grad():
            for n in range(len(data)):
                _, raw = model.detector(data.float_frames(n)[-1:])
                dets.append(decode_predictions(raw[0].numpy(), rc.grid, ev["conf_threshold"], ev["nms_iou"]))
        _, _, curves = detection_map(dets, [a[-1] for a in data.annotations], 0.5, rc.grid.n_classes, return_curves=True)
        (out / "plots").mkdir(exist_ok=True)
        plot_pr_curves(curves, out / "plots" / "pr.png")
    acc = "n/a" if bundle.intent_accuracy is None else f"{bundle.intent_accuracy:.4f}"
    f1 = "n/a" if bundle.intent_f1 is None else f"{bundle.intent_f1:.4f}"
    print(f"intent accuracy {acc}, F1 {f1}, mAP@0.5 {bundle.detection_map:.4f}")
    return EXIT_OK


def _eval_sequential(baseline_path, model, data, rc: RunConfig) -> dict:
    from pedintent.association import pipeline_sequential
    from pedintent.eval_bench.metrics import intent_metrics
    from pedintent.training import load_baseline

    baseline, _ = load_baseline(baseline_path)
    ev = rc.raw["eval"]
    frames = []
    for n in range(len(data)):
        o = pipeline_sequential(data.float_frames(n), model, baseline, rc.grid, data.annotations[n], ev["conf_threshold"], ev["nms_iou"])
        frames.append((o.assignments, data.annotations[n][-1]))
    return {str(float(h)): intent_metrics(frames, h).to_dict() for h in ev["height_filters"]}


def cmd_bench(args) -> int:
    import torch

    from pedintent.association import pipeline_sequential, pipeline_single_shot
    from pedintent.eval_bench.bench import bench_scenes, latency_bench, memory_report
    from pedintent.eval_bench.report import plot_latency, write_report
    from pedintent.models import IntentModel, SequentialBaseline
    from pedintent.training import load_baseline, load_model

    rc = _run_config(args)
    b = rc.raw["bench"]
    counts = args.counts or b["counts"]
    reps = args.reps if args.reps is not None else b["reps"]
    warmup = args.warmup if args.warmup is not None else b["warmup"]
    torch.manual_seed(rc.raw["train"]["seed"])
    model = load_model(args.checkpoint)[0] if args.checkpoint else IntentModel(rc.detector, rc.auxiliary()).eval()
    baseline = load_baseline(args.baseline)[0] if args.baseline else SequentialBaseline(rc.sequential).eval()
    out = _out_dir(args, rc)
    torch.set_num_threads(args.threads)
    scenes = {k: (torch.from_numpy(s.stacked()), s.annotations) for k, s in bench_scenes(rc.world, counts, rc.grid.stride).items()}
    calls = {"n": 0}

    def count_call(_track):
        calls["n"] += 1

    runners = {
        "single_shot": lambda k: pipeline_single_shot(scenes[k][0], model, rc.grid).timings_ns,
        "sequential": lambda k: pipeline_sequential(
            scenes[k][0], model, baseline, rc.grid, scenes[k][1], on_classify=count_call, oracle_pedestrians=True
        ).timings_ns,
    }
    report = latency_bench(runners, counts, reps, warmup, n_boot=b["n_boot"], seed=rc.raw["train"]["seed"], calls={"sequential": lambda: calls["n"]})
    mem = memory_report(model.detector, model.auxiliary, baseline)
    write_report(out, "bench", {"latency": report.to_dict(), "memory": mem.to_dict()})
    (out / "latency.json").write_text(report.to_json())
    if args.plots:
        (out / "plots").mkdir(exist_ok=True)
        plot_latency(report, out / "plots" / "latency.png")
    for name, fit in report.slopes.items():
        c1 = report.median_ms(name, min(counts))
        print(f"{name}: {c1:.2f} ms at {min(counts)} ped, slope {fit.slope_ms:+.3f} ms/ped [{fit.ci_low_ms:+.3f}, {fit.ci_high_ms:+.3f}]")
    print(f"parameter bytes: single-shot {mem.single_shot_total_bytes}, sequential {mem.sequential_total_bytes}, delta {mem.delta_bytes}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from pedintent.eval_bench.ablation import ablate_tap_layer
    from pedintent.eval_bench.report import write_report, write_table_csv

    rc = _run_config(args)
    out = _out_dir(args, rc)
    rows = ablate_tap_layer(args.layers, args.data, args.detector_checkpoint, rc, out, epochs=args.epochs)
    table = [r.to_dict() for r in rows]
    write_report(out, "ablate", {"rows": table})
    write_table_csv(out / "ablation.csv", table)
    for r in rows:
        print(f"L={r.tap_layer}: accuracy {r.accuracy:.4f}, F1 {r.f1:.4f}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from pedintent.demo import render_demo
    from pedintent.training import load_model, load_split

    rc = _run_config(args)
    out = _out_dir(args, rc)
    model, _ = load_model(args.checkpoint)
    data = load_split(args.data, args.split, rc.grid)
    indices = args.index or [0]
    for n in indices:
        if not 0 <= n < len(data):
            raise ConfigError("index", f"sequence {n} not in [0, {len(data)})")
        path, glyphs = render_demo(model, data.float_frames(n), data.annotations[n], rc.grid, out, f"seq{n:05d}", rc.raw["eval"])
        print(f"{path}: {len(glyphs)} pedestrians")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    common.add_argument("--config", help="JSON file deep-merged over the preset")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one value (JSON-parsed)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pedintent", description="Single-shot pedestrian detection and crossing intention.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train one regime")
    t.add_argument("--regime", required=True, choices=["detector_only", "auxiliary_frozen", "multitask", "sequential"])
    t.add_argument("--data", required=True, help="dataset directory or manifest.json")
    t.add_argument("--detector-checkpoint")
    t.add_argument("--tap-layer", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--plots", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--baseline", help="crop-baseline checkpoint to score the sequential pipeline as well")
    e.add_argument("--plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="latency and memory benchmark")
    b.add_argument("--checkpoint", help="intent model checkpoint (default: untrained weights)")
    b.add_argument("--baseline", help="crop-baseline checkpoint (default: untrained weights)")
    b.add_argument("--counts", type=_int_list)
    b.add_argument("--reps", type=int)
    b.add_argument("--warmup", type=int)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--plots", action="store_true")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("ablate", parents=[common], help="tap-layer ablation")
    a.add_argument("--layers", type=_int_list, required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--detector-checkpoint", required=True)
    a.add_argument("--epochs", type=int)
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("demo", parents=[common], help="render predicted vs ground-truth intent")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--split", default="test")
    d.add_argument("--index", type=_int_list)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BenchmarkError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
