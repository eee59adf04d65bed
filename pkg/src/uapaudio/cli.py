"""Command-line driver for dataset preparation, training, attacks and audits.

Every command takes paths relative to ``--workdir``, draws all randomness
from a single ``--seed`` and writes a manifest next to its primary output
(``<output>.manifest.json``).  Exit code 2 signals a configuration problem
(bad flags, missing inputs); unexpected runtime failures exit 1.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click

from . import attacks, dataset, loudness, model, report
from .frontend import (
    MODEL_A_FRONTEND,
    MODEL_B_FRONTEND,
    TOY_FRONTEND_A,
    TOY_FRONTEND_B,
)
from .manifest import RunManifest, Stopwatch

FRONTENDS = {
    "a": MODEL_A_FRONTEND,
    "b": MODEL_B_FRONTEND,
    "toy-a": TOY_FRONTEND_A,
    "toy-b": TOY_FRONTEND_B,
}
ARCHITECTURES = {
    "default": model.DEFAULT_ARCHITECTURE,
    "toy": model.TOY_ARCHITECTURE,
}


class _Ctx:
    def __init__(self, workdir: Path, jobs: int):
        self.workdir = workdir
        self.jobs = jobs

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.workdir / p


def _require_file(ctx: _Ctx, value, flag: str) -> Path:
    path = ctx.resolve(value)
    if not path.exists():
        raise click.UsageError(f"{flag}: {path} does not exist")
    return path


def _write_manifest(ctx: _Ctx, command: str, config: dict, seeds: dict, inputs, outputs, elapsed: float):
    primary = Path(outputs[0])
    manifest = RunManifest(command=command, config=config, seeds=seeds, wall_clock_seconds=elapsed)
    for path in inputs:
        manifest.add_input(path)
    for path in outputs:
        manifest.add_output(path)
    manifest.write(str(primary) + ".manifest.json")


@click.group()
@click.option("--workdir", default=".", type=click.Path(file_okay=False), help="Base directory for relative paths.")
@click.option("--jobs", envvar="UAP_AUDIO_JOBS", default=1, show_default=True, help="Worker pool size for independent trials.")
@click.pass_context
def main(ctx, workdir, jobs):
    """Train small speech-command models, craft universal audio perturbations, audit them."""
    if jobs < 1:
        raise click.UsageError("--jobs must be at least 1")
    ctx.obj = _Ctx(Path(workdir), jobs)


@main.group("dataset")
def dataset_group():
    """Create or normalize datasets in the per-class directory layout."""


@dataset_group.command("synth")
@click.option("--out", required=True, help="Output dataset directory.")
@click.option("--classes", default=4, show_default=True, help="Number of synthetic classes.")
@click.option("--per-class", default=200, show_default=True, help="Clips per class.")
@click.option("--seed", default=0, show_default=True)
@click.option("--class-names", default=None, help="Comma-separated class names overriding the default word list.")
@click.option("--valid-fraction", default=0.2, show_default=True)
@click.pass_obj
def cmd_dataset_synth(ctx, out, classes, per_class, seed, class_names, valid_fraction):
    """Generate a deterministic synthetic tone/chirp corpus."""
    out_dir = ctx.resolve(out)
    names = tuple(class_names.split(",")) if class_names else None
    if names and len(names) != classes:
        raise click.UsageError("--class-names must list exactly --classes names")
    with Stopwatch() as timer:
        index = dataset.synth_dataset(
            out_dir, n_classes=classes, per_class=per_class, seed=seed,
            class_names=names, valid_fraction=valid_fraction,
        )
    _write_manifest(
        ctx, "dataset synth",
        {"classes": classes, "per_class": per_class, "class_names": index["labels"],
         "valid_fraction": valid_fraction},
        {"seed": seed}, [], [out_dir / dataset.INDEX_NAME], timer.elapsed,
    )
    click.echo(f"wrote {len(index['files'])} clips across {classes} classes to {out_dir}")


@dataset_group.command("ingest")
@click.option("--src", required=True, help="Source directory in per-class layout.")
@click.option("--out", required=True, help="Normalized output dataset directory.")
@click.option("--seed", default=0, show_default=True)
@click.option("--valid-fraction", default=0.2, show_default=True)
@click.pass_obj
def cmd_dataset_ingest(ctx, src, out, seed, valid_fraction):
    """Validate and normalize an existing corpus, emitting a split index."""
    src_dir = _require_file(ctx, src, "--src")
    out_dir = ctx.resolve(out)
    with Stopwatch() as timer:
        try:
            index, ingest_report = dataset.ingest_dataset(src_dir, out_dir, seed, valid_fraction)
        except dataset.LayoutError as exc:
            raise click.UsageError(f"--src: {exc}") from exc
    for item in ingest_report.rejected:
        click.echo(f"rejected {item['path']}: {item['reason']}", err=True)
    _write_manifest(
        ctx, "dataset ingest",
        {"src": str(src_dir), "valid_fraction": valid_fraction,
         "rejected": len(ingest_report.rejected)},
        {"seed": seed}, [], [out_dir / dataset.INDEX_NAME], timer.elapsed,
    )
    click.echo(f"accepted {ingest_report.accepted} clips, rejected {len(ingest_report.rejected)}")


@main.command("train")
@click.option("--dataset", "dataset_dir", required=True, help="Indexed dataset directory.")
@click.option("--out", required=True, help="Model file to write.")
@click.option("--epochs", default=30, show_default=True)
@click.option("--batch", default=32, show_default=True)
@click.option("--lr", default=2e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--frontend", "frontend_name", default="a", type=click.Choice(sorted(FRONTENDS)), show_default=True)
@click.option("--arch", "arch_name", default="default", type=click.Choice(sorted(ARCHITECTURES)), show_default=True)
@click.option("--label-smoothing", default=0.0, show_default=True)
@click.pass_obj
def cmd_train(ctx, dataset_dir, out, epochs, batch, lr, seed, frontend_name, arch_name, label_smoothing):
    """Train a classifier on the dataset's train split."""
    data_dir = _require_file(ctx, dataset_dir, "--dataset")
    out_path = ctx.resolve(out)
    try:
        train_set = dataset.load_split(data_dir, "train")
        valid_set = dataset.load_split(data_dir, "valid")
    except dataset.LayoutError as exc:
        raise click.UsageError(f"--dataset: {exc}") from exc
    config = model.TrainConfig(epochs=epochs, batch_size=batch, lr=lr, seed=seed,
                               label_smoothing=label_smoothing)
    with Stopwatch() as timer:
        params, log = model.train(train_set, config, frontend=FRONTENDS[frontend_name],
                                  arch=ARCHITECTURES[arch_name])
        valid_acc = model.accuracy(params, valid_set)
        model.save_params(params, out_path)
    log_path = str(out_path) + ".trainlog.json"
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump({"losses": log.losses, "accuracies": log.accuracies,
                   "valid_accuracy": valid_acc}, fh, indent=2)
        fh.write("\n")
    _write_manifest(
        ctx, "train",
        {"dataset": str(data_dir), "epochs": epochs, "batch": batch, "lr": lr,
         "frontend": frontend_name, "arch": arch_name, "label_smoothing": label_smoothing,
         "model_checksum": params.checksum()},
        {"seed": seed}, [data_dir / dataset.INDEX_NAME], [out_path, log_path], timer.elapsed,
    )
    click.echo(f"trained {frontend_name}/{arch_name} model: valid accuracy {valid_acc:.4f} -> {out_path}")


def _parse_p(value: str) -> float:
    if value in ("inf", "Inf", "INF"):
        return math.inf
    if value == "2":
        return 2.0
    raise click.UsageError("--p must be 2 or inf")


@main.command("attack")
@click.option("--dataset", "dataset_dir", required=True, help="Indexed dataset directory.")
@click.option("--model", "model_path", required=True, help="Target model file.")
@click.option("--level", required=True, type=click.IntRange(1, 3))
@click.option("--classes", multiple=True, help="Targeted classes (repeatable); level 3 defaults to all.")
@click.option("--xi", default=0.1, show_default=True, help="Perturbation norm budget.")
@click.option("--p", "p_norm", default="2", show_default=True, help="Norm order: 2 or inf.")
@click.option("--alpha", default=0.1, show_default=True, help="Stop once the flip rate exceeds 1-alpha.")
@click.option("--overshoot", default=0.1, show_default=True)
@click.option("--max-iters", default=100, show_default=True)
@click.option("--passes", default=5, show_default=True)
@click.option("--trials", default=5, show_default=True)
@click.option("--train-per-class", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, help="Perturbation sidecar file to write (e.g. pert.wavx).")
@click.pass_obj
def cmd_attack(ctx, dataset_dir, model_path, level, classes, xi, p_norm, alpha, overshoot,
               max_iters, passes, trials, train_per_class, seed, out):
    """Craft a universal perturbation at the requested universality level."""
    data_dir = _require_file(ctx, dataset_dir, "--dataset")
    model_file = _require_file(ctx, model_path, "--model")
    out_path = ctx.resolve(out)
    try:
        cfg = attacks.AttackConfig(
            overshoot=overshoot, deepfool_max_iters=max_iters, xi=xi, p=_parse_p(p_norm),
            alpha=alpha, max_passes=passes, trials=trials, rng_seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    params = model.load_params(model_file)
    clf = model.ClassifierModel(params)
    try:
        lvl = attacks.UniversalityLevel.for_level(level, tuple(classes), clf.label_set)
    except ValueError as exc:
        raise click.UsageError(f"--level/--classes: {exc}") from exc
    train_set = dataset.load_split(data_dir, "train")
    valid_set = dataset.load_split(data_dir, "valid")

    with Stopwatch() as timer:
        try:
            result = attacks.run_level_experiment(
                lvl, train_set, clf, cfg, train_per_class=train_per_class, jobs=ctx.jobs,
            )
        except attacks.InsufficientSamplesError as exc:
            raise click.UsageError(f"--train-per-class: {exc}") from exc
        best = result.best
        level_classes = set(lvl.classes)
        valid_sub = [w for w in valid_set if w.label in level_classes]
        valid_fr = attacks.fooling_ratio(clf, valid_sub, best) if valid_sub else None

    config_snapshot = {
        "level": level, "classes": list(lvl.classes), "xi": xi, "p": p_norm,
        "alpha": alpha, "overshoot": overshoot, "max_iters": max_iters,
        "passes": passes, "trials": trials, "train_per_class": train_per_class,
    }
    attacks.save_perturbation(best, out_path, model_checksum=params.checksum(),
                              config=config_snapshot)
    record = {
        "level": level,
        "classes": list(lvl.classes),
        "best_trial": result.best_trial,
        "valid_fr": valid_fr,
        "trials": [
            {"trial": t.trial, "train_fr": t.train_fr, "train_raw_rate": t.train_raw_rate,
             "passes_run": t.passes_run, "accepted": t.accepted, "skipped": t.skipped,
             "perturbation_norm": t.perturbation.norm()}
            for t in result.trials
        ],
    }
    record_path = str(out_path) + f".level{level}.json"
    with open(record_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        ctx, "attack", config_snapshot, {"seed": seed},
        [model_file, data_dir / dataset.INDEX_NAME], [out_path, record_path], timer.elapsed,
    )
    best_fr = result.trials[result.best_trial].train_fr
    click.echo(
        f"best trial {result.best_trial}: train FR "
        f"{'undefined' if best_fr is None else f'{best_fr:.4f}'}, "
        f"valid FR {'undefined' if valid_fr is None else f'{valid_fr:.4f}'} -> {out_path}"
    )


@main.command("eval")
@click.option("--perturbation", required=True, help="Perturbation sidecar file.")
@click.option("--model-a", "model_a_path", required=True, help="Model the perturbation was crafted on.")
@click.option("--model-b", "model_b_path", required=True, help="Transfer target model.")
@click.option("--dataset", "dataset_dir", required=True, help="Indexed dataset directory.")
@click.option("--out", required=True, help="Report file (.csv or .json).")
@click.option("--classes", multiple=True, help="Restrict evaluation to these classes.")
@click.pass_obj
def cmd_eval(ctx, perturbation, model_a_path, model_b_path, dataset_dir, out, classes):
    """Per-class fooling and transfer report for a stored perturbation."""
    pert_file = _require_file(ctx, perturbation, "--perturbation")
    file_a = _require_file(ctx, model_a_path, "--model-a")
    file_b = _require_file(ctx, model_b_path, "--model-b")
    data_dir = _require_file(ctx, dataset_dir, "--dataset")
    out_path = ctx.resolve(out)

    pert, header = attacks.load_perturbation(pert_file)
    clf_a = model.ClassifierModel(model.load_params(file_a))
    clf_b = model.ClassifierModel(model.load_params(file_b))
    train_set = dataset.load_split(data_dir, "train")
    valid_set = dataset.load_split(data_dir, "valid")
    if classes:
        keep = set(classes)
        train_set = [w for w in train_set if w.label in keep]
        valid_set = [w for w in valid_set if w.label in keep]
        if not train_set or not valid_set:
            raise click.UsageError("--classes: no clips left after filtering")

    with Stopwatch() as timer:
        result = report.evaluate_perturbation(
            pert, clf_a, clf_b, train_set, valid_set,
            metadata={"perturbation": str(pert_file), "level": header["config"].get("level"),
                      "model_a": clf_a.checksum(), "model_b": clf_b.checksum()},
        )
        report.export_report(result, out_path)
    _write_manifest(
        ctx, "eval", {"perturbation": str(pert_file), "classes": list(classes)},
        {}, [pert_file, file_a, file_b], [out_path], timer.elapsed,
    )
    total = result.total
    click.echo(
        f"total: A train/valid {_fmt(total.frA_train)}/{_fmt(total.frA_valid)}, "
        f"B train/valid {_fmt(total.frB_train)}/{_fmt(total.frB_valid)}, "
        f"mean dB {_fmt(total.mean_db)} -> {out_path}"
    )


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


@main.command("distortion")
@click.option("--perturbation", required=True, help="Perturbation sidecar file.")
@click.option("--dataset", "dataset_dir", required=True, help="Indexed dataset directory.")
@click.option("--split", default="valid", show_default=True, type=click.Choice(["train", "valid", "all"]))
@click.option("--out", required=True, help="Audit file (.csv or .json).")
@click.pass_obj
def cmd_distortion(ctx, perturbation, dataset_dir, split, out):
    """Vocal/background relative-loudness audit of a perturbation."""
    pert_file = _require_file(ctx, perturbation, "--perturbation")
    data_dir = _require_file(ctx, dataset_dir, "--dataset")
    out_path = ctx.resolve(out)
    pert, _ = attacks.load_perturbation(pert_file)
    clips = dataset.load_split(data_dir, None if split == "all" else split)
    with Stopwatch() as timer:
        audit = loudness.distortion_report(pert, clips)
        fmt = "json" if str(out_path).endswith(".json") else "csv"
        loudness.export_distortion(audit, out_path, fmt)
    _write_manifest(
        ctx, "distortion", {"perturbation": str(pert_file), "split": split},
        {}, [pert_file, data_dir / dataset.INDEX_NAME], [out_path], timer.elapsed,
    )
    overall = audit.overall_means()
    click.echo(
        f"audited {len(audit.records)} clips "
        f"(skipped {audit.skipped_no_energy} without energy): "
        f"background max {_fmt(overall['background_max'])} dB, "
        f"vocal max {_fmt(overall['vocal_max'])} dB -> {out_path}"
    )


if __name__ == "__main__":
    main()
