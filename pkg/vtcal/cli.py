# -*- coding: utf-8 -*-

"""Command line entry point: vtcal gen-task | run | sweep | diagnose | report."""

import argparse
import logging
import os
import sys

from vtcal import diagnostics as diag
from vtcal import harness
from vtcal import numeric as num
from vtcal.common import VtcalError
from vtcal.config import RunConfig, scaled_num_kept
from vtcal.decoder import build_model
from vtcal.htables import EXIT_CONFIG, EXIT_IO, EXIT_OK, Mode
from vtcal.pipeline import make_query
from vtcal.vision import PatchEncoder, augment, generate_scene, save_scene

_LOGGER = logging.getLogger(__name__)

OVERHEAD_COLUMNS = (
    "amortized_probe",
    "max_new",
    "pipeline_per_token",
    "probe_seconds",
    "ratio",
    "vanilla_per_token",
)


def _int_list(text):
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected integers, got {}".format(text))


def _float_list(text):
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected numbers, got {}".format(text))


def load_config(args):
    """Return the RunConfig of a config file with command line overrides."""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    for name in ("seed", "task_path", "output_dir"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "mode", None):
        changes["mode"] = Mode(args.mode)
    return config.replace(**changes) if changes else config


def _task(config):
    if os.path.exists(config.task_path):
        return harness.load_task(config)
    _LOGGER.info("No task at %s; building it in memory", config.task_path)
    return harness.build_task(config.task)


def gen_task(args):
    """Write the task file, and optionally scene images and the config."""
    config = load_config(args)
    task = harness.build_task(config.task)
    task.save(config.task_path)
    _LOGGER.info("Wrote %s", config.task_path)
    if args.write_config:
        config.save(args.write_config)
    if args.export_dir:
        harness.ensure_dir(args.export_dir)
        for probe in task.tasks:
            scene = generate_scene(
                len(probe.objects), probe.scene_seed, config.task.vocab_size
            )
            save_scene(
                scene, os.path.join(args.export_dir, "scene-{}.png".format(scene.seed))
            )


def run(args):
    """Run one experiment and write its result and report."""
    config = load_config(args)
    result = harness.run_experiment(
        config, _task(config), resume=args.resume, cache_dir=args.cache_dir
    )
    stem = "report-{}".format(config.mode.value)
    harness.emit_report([result], config.output_dir, stem)
    for split in sorted(result.metrics):
        values = result.metrics[split]
        print(
            "{:<12} {:<12} accuracy={:.4f} f1={:.4f} hallucination={:.4f}".format(
                result.mode.value,
                split,
                values["accuracy"],
                values["f1"],
                values["hallucination_rate"],
            )
        )


def sweep(args):
    """Run one of the parameter sweeps."""
    config = load_config(args)
    task = _task(config)
    workers = config.calib.workers
    if args.kind == "modes":
        results = harness.sweep_modes(config, task, workers=workers)
    elif args.kind == "strengths":
        results = harness.sweep_strengths(
            config, task, args.svc_grid, args.crc_grid, workers=workers
        )
    elif args.kind == "negatives":
        results = harness.sweep_negatives(config, task, args.negatives_grid, workers)
    elif args.kind == "kept":
        points = diag.pruning_sweep(config, task, args.kept_grid, seed=config.seed)
        harness.emit_measurements(
            ("num_kept", "accuracy", "low", "high"),
            points,
            config.output_dir,
            "sweep-kept",
            {
                "fingerprint": config.fingerprint,
                "points": [point._asdict() for point in points],
                "seed": config.seed,
                "trend": diag.pruning_trend(points),
            },
        )
        return
    else:
        strength, rates = harness.calibrate_bias(config, task, args.target)
        harness.emit_measurements(
            ("prior_bias_strength", "hallucination_rate"),
            sorted(rates.items()),
            config.output_dir,
            "sweep-bias",
            {
                "fingerprint": config.fingerprint,
                "seed": config.seed,
                "selected": strength,
                "target": args.target,
            },
        )
        return
    harness.emit_report(results, config.output_dir, "sweep-{}".format(args.kind))


# pylint: disable=too-many-locals
def diagnose(args):
    """Run one diagnostic over the first scenes of the task."""
    config = load_config(args)
    task = _task(config)
    model = build_model(config.decoder)
    encoder = PatchEncoder(config.encoder_seed, config.decoder.hidden_dim)
    rows, extra = [], {}
    reports = []
    for index, probe in enumerate(task.tasks[: args.scenes]):
        scene = generate_scene(
            len(probe.objects), probe.scene_seed, task.spec.vocab_size
        )
        vision = encoder.encode(scene)
        query = make_query(probe.questions[0].object_id)
        rng = num.make_rng(config.seed, index, 7)
        if args.kind == "attention":
            trace = diag.trace_visual_attention(
                model, vision, query, args.max_new, config.calib.layer
            )
            rows.extend(
                (index, step, mass) for step, mass in enumerate(trace.masses, 1)
            )
            extra.setdefault("trends", []).append(trace.trend())
        elif args.kind == "overlap":
            calib = config.calib
            view = encoder.encode(
                augment(
                    scene,
                    rng,
                    calib.flip_prob,
                    calib.blur_radius,
                    calib.noise_intensity,
                    calib.salt_ratio,
                )
            )
            hidden = model.hidden_states(vision, query, max(calib.layer - 1, 1))[-1]
            rows.append((index, diag.complementarity_overlap(vision, view, hidden)))
        elif args.kind == "distance":
            distances = diag.distance_report(
                model, scene, vision, query, config.calib, encoder, rng
            )
            reports.append(distances)
            rows.extend((index,) + tuple(entry) for entry in distances.entries)
        else:
            for max_new in args.max_new_grid:
                overhead = diag.measure_overhead(
                    model,
                    scene,
                    vision,
                    query,
                    config.calib,
                    encoder,
                    max_new,
                    seed=config.seed,
                )
                values = overhead.as_dict()
                rows.append((index,) + tuple(values[key] for key in sorted(values)))
    columns = {
        "attention": ("scene", "step", "mass"),
        "overlap": ("scene", "overlap"),
        "distance": ("scene", "layer", "kind", "sample", "distance"),
        "overhead": ("scene",) + OVERHEAD_COLUMNS,
    }[args.kind]
    if reports:
        extra["gap"] = diag.distance_gap(reports, config.calib.layer, config.seed)
    summary = dict(extra, fingerprint=config.fingerprint, seed=config.seed)
    harness.emit_measurements(
        columns, rows, config.output_dir, "diagnose-{}".format(args.kind), summary
    )


def report(args):
    """Merge stored run results into one report."""
    results = [harness.RunResult.load(path) for path in args.results]
    harness.emit_report(results, args.output_dir, args.stem)


def build_parser():
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="vtcal", description="Vision-token calibration experiments."
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug"
    )
    commands = parser.add_subparsers(dest="command")
    commands.required = True

    def add_command(name, func, help_text, seed_required=False):
        command = commands.add_parser(name, help=help_text)
        command.set_defaults(func=func)
        command.add_argument("--config", help="INI configuration file")
        command.add_argument("--seed", type=int, required=seed_required)
        command.add_argument("--task", dest="task_path", help="task JSON file")
        command.add_argument("--output-dir", dest="output_dir")
        command.add_argument("--mode", choices=[mode.value for mode in Mode])
        return command

    command = add_command("gen-task", gen_task, "build the synthetic task file")
    command.add_argument("--write-config", help="also write the effective config here")
    command.add_argument("--export-dir", help="also write scene PNGs and sidecars here")

    command = add_command("run", run, "run one experiment", seed_required=True)
    command.add_argument("--resume", action="store_true")
    command.add_argument(
        "--cache-dir", help="reuse and store calibration direction caches here"
    )

    command = add_command("sweep", sweep, "run a parameter sweep")
    command.add_argument(
        "--kind",
        choices=("modes", "strengths", "negatives", "kept", "bias"),
        default="modes",
    )
    command.add_argument("--svc-grid", type=_float_list, default=[0.0, 0.06, 0.12])
    command.add_argument("--crc-grid", type=_float_list, default=[0.05, 0.1, 0.2])
    command.add_argument("--negatives-grid", type=_int_list, default=[1, 2, 3, 5])
    command.add_argument(
        "--kept-grid",
        type=_int_list,
        default=[36, 18, 9, 5, scaled_num_kept(36)],
    )
    command.add_argument("--target", type=float, default=0.3)

    command = add_command(
        "diagnose", diagnose, "measure attention, overlap, distance or cost"
    )
    command.add_argument(
        "--kind",
        choices=("attention", "overlap", "distance", "overhead"),
        default="attention",
    )
    command.add_argument("--scenes", type=int, default=10)
    command.add_argument("--max-new", type=int, default=32)
    command.add_argument("--max-new-grid", type=_int_list, default=[16, 64, 256])

    command = commands.add_parser("report", help="merge stored run results")
    command.set_defaults(func=report)
    command.add_argument("results", nargs="+", help="result JSON files")
    command.add_argument("--output-dir", dest="output_dir", default=".")
    command.add_argument("--stem", default="report")
    return parser


def main(argv=None):
    """Run the command line interface and return its exit code."""
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except VtcalError as err:
        _LOGGER.error("%s", err)
        return err.exit_code
    except ValueError as err:
        _LOGGER.error("invalid value: %s", err)
        return EXIT_CONFIG
    except OSError as err:
        _LOGGER.error("file error: %s", err)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
