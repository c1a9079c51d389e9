# -*- coding: utf-8 -*-

"""
Synthetic object-presence task and experiment runner.

Every scene gets, per split, an even number of questions: half about objects
in the scene (answer yes) and half about absent objects (answer no). Absent
objects are drawn at random for the random split, from the most frequent
objects of the whole task for the popular split, and from the objects that
most often share a scene with the present ones for the adversarial split.
"""

import csv
import io
import json
import logging
import os
import time
from collections import Counter, namedtuple
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations

from vtcal import numeric as num
from vtcal.common import BaseClass, ConfigError, PersistenceError
from vtcal.config import TaskSpec
from vtcal.crc import ProbeCache
from vtcal.decoder import build_model
from vtcal.htables import (
    BIAS_STRENGTH_GRID,
    CRC_STRENGTH_GRID,
    METRICS,
    REPORT_COLUMNS,
    YES,
    Mode,
    Split,
)
from vtcal.pipeline import answer_question, assemble_pipeline, make_query
from vtcal.vision import PatchEncoder, generate_scene

_LOGGER = logging.getLogger(__name__)

Question = namedtuple("Question", "object_id, answer, split")


class ProbeTask(BaseClass):
    """The questions asked about one scene."""

    def __init__(self, scene_seed, objects, questions):
        """Initialize from a scene seed, its object ids and its questions."""
        self.scene_seed = int(scene_seed)
        self.objects = tuple(int(obj) for obj in objects)
        self.questions = tuple(
            Question(int(obj), answer, Split(split).value)
            for obj, answer, split in questions
        )
        for question in self.questions:
            if (question.answer == "yes") != (question.object_id in self.objects):
                raise ValueError(
                    "question {} contradicts scene objects {}".format(
                        question, self.objects
                    )
                )

    def __repr__(self):
        """Return a short representation of the task."""
        return "ProbeTask(scene_seed={}, objects={}, questions={})".format(
            self.scene_seed, self.objects, len(self.questions)
        )

    def by_split(self, split):
        """Return the questions of one split."""
        return [q for q in self.questions if q.split == Split(split).value]


class TaskSet(BaseClass):
    """All scenes and questions of a task, with the spec that made them."""

    def __init__(self, spec, tasks):
        """Initialize from a TaskSpec and a list of ProbeTask."""
        self.spec = spec
        self.tasks = list(tasks)

    def __repr__(self):
        """Return a short representation of the task set."""
        return "TaskSet(spec={!r}, scenes={})".format(self.spec, len(self.tasks))

    def __len__(self):
        """Return the number of scenes."""
        return len(self.tasks)

    def as_dict(self):
        """Return the JSON-ready task set."""
        return {
            "spec": dict(sorted(self.spec.__dict__.items())),
            "tasks": [
                {
                    "objects": list(task.objects),
                    "questions": [list(q) for q in task.questions],
                    "scene_seed": task.scene_seed,
                }
                for task in self.tasks
            ],
        }

    def save(self, path):
        """Write the task set as JSON."""
        try:
            with open(path, "w") as handle:
                json.dump(self.as_dict(), handle, indent=1, sort_keys=True)
                handle.write("\n")
        except OSError as err:
            raise PersistenceError("cannot write task to {}: {}".format(path, err))

    @classmethod
    def load(cls, path):
        """Read a task set written by save."""
        try:
            with open(path) as handle:
                record = json.load(handle)
        except (OSError, ValueError) as err:
            raise PersistenceError("cannot read task {}: {}".format(path, err))
        tasks = [
            ProbeTask(task["scene_seed"], task["objects"], task["questions"])
            for task in record["tasks"]
        ]
        return cls(TaskSpec(**record["spec"]), tasks)


def _ranked(candidates, counts):
    """Return candidates by descending count, ties by ascending id."""
    return sorted(candidates, key=lambda obj: (-counts[obj], obj))


def build_task(spec):
    """Return the deterministic TaskSet of a TaskSpec."""
    half = spec.questions_per_scene // 2
    if spec.objects_per_scene < half:
        raise ConfigError(
            "{} yes-questions need at least as many objects per scene, got {}".format(
                half, spec.objects_per_scene
            )
        )
    if spec.vocab_size - spec.objects_per_scene < half:
        raise ConfigError(
            "vocabulary of {} is too small for {} distractors per scene".format(
                spec.vocab_size, half
            )
        )
    rng = num.make_rng(spec.seed, 3)
    seeds = [int(seed) for seed in rng.integers(0, 2 ** 31, size=spec.num_scenes)]
    scenes = [
        generate_scene(spec.objects_per_scene, seed, spec.vocab_size).object_ids
        for seed in seeds
    ]
    frequency = Counter(obj for objects in scenes for obj in objects)
    pairs = Counter()
    for objects in scenes:
        for first, second in combinations(objects, 2):
            pairs[first, second] += 1
            pairs[second, first] += 1
    tasks = []
    for seed, objects in zip(seeds, scenes):
        absent = [obj for obj in range(spec.vocab_size) if obj not in objects]
        questions = []
        for split in Split:
            present = rng.choice(objects, size=half, replace=False)
            questions.extend((int(obj), "yes", split.value) for obj in present)
            if split is Split.RANDOM:
                distractors = rng.choice(absent, size=half, replace=False)
            elif split is Split.POPULAR:
                distractors = _ranked(absent, frequency)[:half]
            else:
                together = Counter(
                    {obj: sum(pairs[obj, other] for other in objects) for obj in absent}
                )
                distractors = _ranked(absent, together)[:half]
            questions.extend((int(obj), "no", split.value) for obj in distractors)
        tasks.append(ProbeTask(seed, objects, questions))
    _LOGGER.info("Built task with %d scenes", len(tasks))
    return TaskSet(spec, tasks)


def compute_metrics(truths, answers):
    """Return yes/no classification metrics; yes is the positive class.

    >>> compute_metrics(["yes", "no"], ["yes", "yes"])["hallucination_rate"]
    1.0
    """
    if len(truths) != len(answers):
        raise ValueError(
            "{} answers for {} questions".format(len(answers), len(truths))
        )
    pairs = Counter(zip(truths, answers))
    tp, fp = pairs["yes", "yes"], pairs["no", "yes"]
    tn, fn = pairs["no", "no"], pairs["yes", "no"]
    total = len(truths)
    precision = float(tp) / (tp + fp) if tp + fp else 0.0
    recall = float(tp) / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": float(tp + tn) / total if total else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "yes_ratio": float(tp + fp) / total if total else 0.0,
        "hallucination_rate": float(fp) / (fp + tn) if fp + tn else 0.0,
    }


class RunResult(BaseClass):
    """Metrics of one run, keyed by split, plus timings."""

    def __init__(self, fingerprint, seed, mode, metrics, timing=None, config=None):
        """Initialize the result."""
        self.fingerprint = fingerprint
        self.seed = int(seed)
        self.mode = Mode(mode)
        self.metrics = {
            split: {name: float(values[name]) for name in METRICS}
            for split, values in metrics.items()
        }
        self.timing = dict(timing or {})
        self.config = config

    def __repr__(self):
        """Return a short representation of the result."""
        return "RunResult(fingerprint={!r}, seed={}, mode={}, splits={})".format(
            self.fingerprint[:12], self.seed, self.mode.value, sorted(self.metrics)
        )

    def as_dict(self):
        """Return the JSON-ready result."""
        return {
            "config": self.config,
            "fingerprint": self.fingerprint,
            "metrics": self.metrics,
            "mode": self.mode.value,
            "seed": self.seed,
            "timing": self.timing,
        }

    def save(self, path):
        """Write the result as JSON."""
        try:
            with open(path, "w") as handle:
                json.dump(self.as_dict(), handle, indent=2, sort_keys=True)
                handle.write("\n")
        except OSError as err:
            raise PersistenceError("cannot write result to {}: {}".format(path, err))

    @classmethod
    def load(cls, path):
        """Read a result written by save."""
        try:
            with open(path) as handle:
                record = json.load(handle)
            return cls(
                record["fingerprint"],
                record["seed"],
                record["mode"],
                record["metrics"],
                record.get("timing"),
                record.get("config"),
            )
        except (OSError, ValueError, KeyError) as err:
            raise PersistenceError("cannot read result {}: {}".format(path, err))


def ensure_dir(path):
    """Create a directory and its parents unless it already exists."""
    if os.path.isdir(path):
        return
    try:
        os.makedirs(path)
    except OSError as err:
        raise PersistenceError("cannot create {}: {}".format(path, err))


def result_path(config):
    """Return where a run writes its result."""
    return os.path.join(
        config.output_dir,
        "result-{}-{}-{}.json".format(
            config.mode.value, config.seed, config.fingerprint[:12]
        ),
    )


def cache_path(cache_dir, config, scene_index, question_index):
    """Return where the direction cache of one question is stored."""
    return os.path.join(
        cache_dir,
        "directions-{}-{}-{}.json".format(
            config.fingerprint[:12], scene_index, question_index
        ),
    )


def _stored_cache(path, fingerprint):
    if path is None or not os.path.exists(path):
        return None
    _LOGGER.debug("Reusing direction cache %s", path)
    return ProbeCache.load(path, fingerprint)


def load_task(config):
    """Return the task file of a config after checking it matches the config."""
    task = TaskSet.load(config.task_path)
    if task.spec != config.task:
        raise PersistenceError(
            "task file {} was built from {!r}, config says {!r}".format(
                config.task_path, task.spec, config.task
            )
        )
    return task


# pylint: disable=too-many-locals
def answer_task(config, task, model=None, vision_filter=None, cache_dir=None):
    """Return {split: (truths, answers)} for every question of a task.

    vision_filter, if given, maps (vision tokens, rng) to the tokens the
    model actually sees; calibration still builds from the full tokens.
    With cache_dir, each question reuses the direction cache stored there
    for the same config and stores the ones it has to compute.
    """
    model = model if model is not None else build_model(config.decoder)
    encoder = PatchEncoder(config.encoder_seed, config.decoder.hidden_dim)
    outcomes = {split: ([], []) for split in config.splits}
    for scene_index, probe in enumerate(task.tasks):
        scene = generate_scene(
            len(probe.objects), probe.scene_seed, task.spec.vocab_size
        )
        if scene.object_ids != probe.objects:
            raise PersistenceError(
                "scene {} does not regenerate objects {}".format(
                    probe.scene_seed, probe.objects
                )
            )
        vision = encoder.encode(scene)
        for index, question in enumerate(probe.questions):
            if question.split not in outcomes:
                continue
            rng = num.make_rng(config.seed, scene_index, index)
            query = make_query(question.object_id)
            seen = vision
            if vision_filter is not None:
                filter_rng = num.make_rng(config.seed, scene_index, index, 1)
                seen = vision_filter(vision, filter_rng)
            path = None
            if cache_dir is not None and config.mode in (Mode.CRC, Mode.UNIFIED):
                path = cache_path(cache_dir, config, scene_index, index)
            stored = _stored_cache(path, config.fingerprint)
            pipeline = assemble_pipeline(
                config.mode,
                config.calib,
                model,
                scene,
                vision,
                query,
                encoder,
                rng,
                stored,
                config.fingerprint,
            )
            if path is not None and stored is None:
                ensure_dir(cache_dir)
                pipeline.cache.save(path)
            token = answer_question(model, seen, query, pipeline.hooks)
            truths, answers = outcomes[question.split]
            truths.append(question.answer)
            answers.append("yes" if token == YES else "no")
    return outcomes


def run_experiment(
    config, task=None, model=None, resume=False, save=True, cache_dir=None
):
    """Run every question of the task under the config's mode.

    With resume, a stored result for the same config is returned instead;
    a stored result with a different fingerprint is an error. cache_dir is
    passed on to answer_task.
    """
    path = result_path(config)
    if resume and os.path.exists(path):
        stored = RunResult.load(path)
        if stored.fingerprint != config.fingerprint:
            raise PersistenceError(
                "stored result {} has fingerprint {}, config has {}".format(
                    path, stored.fingerprint, config.fingerprint
                )
            )
        _LOGGER.info("Resumed %s", path)
        return stored
    task = task if task is not None else load_task(config)
    started = time.perf_counter()
    outcomes = answer_task(config, task, model, cache_dir=cache_dir)
    elapsed = time.perf_counter() - started
    count = sum(len(truths) for truths, _ in outcomes.values())
    result = RunResult(
        config.fingerprint,
        config.seed,
        config.mode,
        {split: compute_metrics(*pair) for split, pair in outcomes.items()},
        {"seconds": elapsed, "seconds_per_question": elapsed / max(count, 1)},
        config.as_dict(),
    )
    _LOGGER.info("Ran %s over %d questions in %.2fs", config.mode.value, count, elapsed)
    if save:
        ensure_dir(config.output_dir)
        result.save(path)
    return result


def report_rows(results):
    """Return the sorted CSV rows of a list of results."""
    rows = []
    for result in results:
        for split, values in result.metrics.items():
            for metric in METRICS:
                rows.append(
                    (
                        result.fingerprint,
                        result.seed,
                        result.mode.value,
                        split,
                        metric,
                        values[metric],
                    )
                )
    return sorted(rows)


def emit_report(results, output_dir, stem="report"):
    """Write <stem>.csv and <stem>.json; equal results give equal bytes."""
    if not results:
        raise ValueError("emit_report needs at least one result")
    ordered = sorted(results, key=lambda r: (r.fingerprint, r.seed, r.mode.value))
    summary = [result.as_dict() for result in ordered]
    return emit_measurements(
        REPORT_COLUMNS, report_rows(ordered), output_dir, stem, summary
    )


def hallucination_rate(result):
    """Return the false-yes rate pooled over the result's splits."""
    rates = [values["hallucination_rate"] for values in result.metrics.values()]
    return sum(rates) / len(rates)


def calibrate_bias(config, task, target=0.3, grid=BIAS_STRENGTH_GRID):
    """Return the smallest prior strength whose vanilla false-yes rate hits target.

    Returns (strength, {strength: rate}); strength is None if no grid value
    gets there.
    """
    rates = {}
    for strength in grid:
        decoder = config.decoder.__class__(
            **dict(config.decoder.as_dict(), prior_bias_strength=strength)
        )
        run = config.replace(decoder=decoder, mode=Mode.VANILLA)
        rates[strength] = hallucination_rate(run_experiment(run, task, save=False))
        _LOGGER.info(
            "Prior strength %s gives false-yes rate %.3f", strength, rates[strength]
        )
        if rates[strength] >= target:
            return strength, rates
    _LOGGER.warning("No prior strength reached false-yes rate %s", target)
    return None, rates


def run_grid(configs, task, workers=1):
    """Run several configs, concurrently if asked, sorted by fingerprint."""

    def run(config):
        return run_experiment(config, task, save=False)

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        results = list(pool.map(run, configs))
    return sorted(results, key=lambda r: (r.fingerprint, r.seed, r.mode.value))


def sweep_modes(config, task, modes=tuple(Mode), workers=1):
    """Return one result per mode."""
    return run_grid([config.replace(mode=mode) for mode in modes], task, workers)


def sweep_strengths(
    config, task, svc_grid=(0.0, 0.06, 0.12), crc_grid=CRC_STRENGTH_GRID, workers=1
):
    """Return unified-mode results over a grid of the two strengths."""
    configs = [
        config.replace(
            mode=Mode.UNIFIED,
            calib=config.calib.replace(svc_strength=svc, crc_strength=crc),
        )
        for svc in svc_grid
        for crc in crc_grid
    ]
    return run_grid(configs, task, workers)


def sweep_negatives(config, task, grid=(1, 2, 3, 5), workers=1):
    """Return crc-mode results for several negative-sample counts."""
    configs = [
        config.replace(mode=Mode.CRC, calib=config.calib.replace(num_negatives=count))
        for count in grid
    ]
    return run_grid(configs, task, workers)


def emit_measurements(columns, rows, output_dir, stem, summary):
    """Write one CSV row per measurement plus a JSON summary."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            [repr(value) if isinstance(value, float) else value for value in row]
        )
    csv_path = os.path.join(output_dir, "{}.csv".format(stem))
    json_path = os.path.join(output_dir, "{}.json".format(stem))
    ensure_dir(output_dir)
    try:
        with open(csv_path, "w", newline="") as handle:
            handle.write(buffer.getvalue())
        with open(json_path, "w") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as err:
        raise PersistenceError(
            "cannot write {} to {}: {}".format(stem, output_dir, err)
        )
    return csv_path, json_path
