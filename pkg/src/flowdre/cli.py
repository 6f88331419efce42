"""Command-line experiment driver.

Exit status: 0 on success, 1 on a validation error, 2 on a numerical failure.
Every run writes ``resolved.ini``; rerunning with ``--config <out>/resolved.ini``
reproduces all output files bit-identically.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import RunConfig, load_config, parse_config, resolved_text, validate
from .divergences import ConfigError
from .evaluation import energy_distance
from .flow import FlowError, ParticleBatch, read_points, sample, write_particles
from .nn_core import Checkpoint, load_checkpoint, save_checkpoint
from .plots import line_svg, scatter_svg
from .priors import Gaussian
from .trainer import Mode, TrainingDiverged, train, trajectory_of_means

log = logging.getLogger("flowdre")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class ValidationError(Exception):
    pass


# --- helpers ---------------------------------------------------------------

def _writable(out: Path) -> None:
    p = out
    while not p.exists():
        if p.parent == p:
            break
        p = p.parent
    if p.exists() and not p.is_dir():
        raise ValidationError(f"--out: {p} exists and is not a directory")
    if not os.access(p, os.W_OK):
        raise ValidationError(f"--out: {p} is not writable")


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _points_csv(path: Path, batch: ParticleBatch, seed) -> None:
    write_particles(path, batch, seed=seed)


def _model_of(ck: Checkpoint, use_ema: bool):
    if use_ema and ck.ema is not None:
        return ck.model.with_params(ck.ema.params)
    return ck.model


def _checkpoint(state, cfg: RunConfig) -> Checkpoint:
    return Checkpoint(state.model, state.adam, state.ema, cfg.seed,
                      {"config": resolved_text(cfg), "step": state.step})


def _overrides(cfg: RunConfig, args, training: bool) -> RunConfig:
    pairs = (("train", "seed", "seed"), ("experiment", "n_samples", "n"), ("flow", "K", "K"),
             ("flow", "kappa", "kappa"), ("conditional", "class", "cls"),
             ("conditional", "phi", "phi"), ("sweep", "k_min", "k_min"),
             ("sweep", "k_max", "k_max"), ("sweep", "k_step", "k_step"))
    for section, key, attr in pairs:
        v = getattr(args, attr, None)
        if v is not None:
            cfg = cfg.replace(section, **{key: v})
    validate(cfg, training)
    return cfg


def _load(args, ck: Checkpoint | None = None, training: bool = True) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, training)
    elif ck is not None and "config" in ck.extra:
        cfg = parse_config(ck.extra["config"], training)
    else:
        cfg = parse_config("", training)
    return _overrides(cfg, args, training)


class _MetricsWriter:
    """Streams metric rows so partial logs survive a divergence."""

    def __init__(self, path: Path, dim: int):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(["step", "loss", "lr"] + [f"flowed_mean_{i}" for i in range(dim)]
                        + ["energy_distance"])

    def row(self, h, ed=None):
        self.w.writerow([h["step"], repr(float(h["loss"])), repr(float(h["lr"]))]
                        + [repr(float(m)) for m in h["flowed_mean"]]
                        + ["" if ed is None else repr(float(ed))])

    def close(self):
        self.fh.close()


def _train_run(cfg: RunConfig, out: Path, target, prior, tc=None, tag=""):
    """Train with streamed metrics and periodic snapshots; returns (state | None, failure)."""
    tc = tc or cfg.train_config()
    every = cfg["experiment"]["snapshot_every"]
    reference = ex.reference_draws(target, cfg["experiment"]["eval_n"], cfg.seed)
    writer = _MetricsWriter(out / f"{tag}metrics.csv", prior.dim)

    def callback(state, x_k):
        h = state.history[-1]
        ed = None
        if every and (h["step"] + 1) % every == 0:
            ed = energy_distance(x_k, reference)
            snap = ParticleBatch(x_k, tc.flow.K if tc.mode is Mode.FLOW_GUIDED else 0, "train")
            _points_csv(out / f"{tag}particles_step{h['step'] + 1}.csv", snap, cfg.seed)
            scatter_svg(out / f"{tag}particles_step{h['step'] + 1}.svg",
                        [("target", reference), ("flowed batch", x_k)],
                        title=f"step {h['step'] + 1}")
            save_checkpoint(out / f"{tag}checkpoint_step{h['step'] + 1}.json", _checkpoint(state, cfg))
        writer.row(h, ed)

    try:
        state = train(tc, target, prior, callback=callback)
    except TrainingDiverged as exc:
        expected = tc.mode is Mode.STALE_BASELINE
        failure = {"status": "expected_divergence" if expected else "diverged",
                   "step": exc.step, "recent_losses": [float(x) for x in exc.history],
                   "message": str(exc)}
        _json(out / f"{tag}failure.json", failure)
        return None, failure
    finally:
        writer.close()
    save_checkpoint(out / f"{tag}checkpoint.json", _checkpoint(state, cfg))
    return state, None


def _sample_and_report(cfg, out, model, prior, target, name="samples"):
    flow = cfg.flow_config()
    batch = sample(model, prior, flow, cfg["experiment"]["n_samples"], ex.sampling_rng(cfg.seed))
    reference = ex.reference_draws(target, cfg["experiment"]["eval_n"], cfg.seed)
    _points_csv(out / f"{name}.csv", batch, cfg.seed)
    scatter_svg(out / f"{name}.svg", [("target", reference), (name, batch.points)],
                title=f"{cfg['experiment']['name']}: {flow.K}+{flow.kappa} steps")
    return batch, ex.sample_metrics(batch.points, reference)


# --- subcommands -----------------------------------------------------------

def prepare_train(args):
    cfg = _load(args)
    return cfg, (cfg.target(),)


def cmd_train(cfg: RunConfig, out: Path, target) -> int:
    prior = cfg.prior(target)
    state, failure = _train_run(cfg, out, target, prior)
    if failure is not None:
        _json(out / "metrics.json", failure)
        return EXIT_OK if failure["status"] == "expected_divergence" else EXIT_NUMERIC
    model = state.eval_model(cfg["experiment"]["use_ema"])
    _, metrics = _sample_and_report(cfg, out, model, prior, target)
    metrics.update(status="ok", steps=state.step)
    _json(out / "metrics.json", metrics)
    means = np.array([h["flowed_mean"] for h in state.history])
    if means.shape[1] >= 2:
        line_svg(out / "trajectory.svg", [("flowed mean", means[:, 0], means[:, 1])],
                 title="mean of the flowed batch")
    return EXIT_OK


def prepare_sample(args):
    ck = load_checkpoint(args.ckpt)
    cfg = _load(args, ck, training=False)
    target = cfg.target()
    if ck.model.input_dim != target.dim:
        raise ValidationError(f"checkpoint input dim {ck.model.input_dim} differs from target dim")
    return cfg, (ck, target)


def cmd_sample(cfg: RunConfig, out: Path, ck, target) -> int:
    prior = cfg.prior(target)
    model = _model_of(ck, cfg["experiment"]["use_ema"])
    _, metrics = _sample_and_report(cfg, out, model, prior, target, name="particles")
    _json(out / "metrics.json", metrics)
    return EXIT_OK


def prepare_eval(args):
    a, b = read_points(args.a), read_points(args.b)
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return None, (a, b, args.bin_width)


def cmd_eval(cfg, out: Path | None, a, b, bin_width) -> int:
    metrics = ex.sample_metrics(a, b, mode_bin=bin_width)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        _json(out / "metrics.json", metrics)
    return EXIT_OK


def prepare_chasm(args):
    cfg = _load(args)
    c = cfg["chasm"]
    if not (len(c["near_mean"]) == len(c["far_mean"])):
        raise ValidationError("[chasm] near_mean and far_mean must have equal length")
    ex.stale_config(cfg, c["near_K"])
    return cfg, ()


def cmd_chasm(cfg: RunConfig, out: Path) -> int:
    summary = {}
    for which in ("near", "far"):
        sub = out / f"stale_{which}"
        sub.mkdir()
        res = ex.chasm_stale(cfg, which)
        entry = {"status": res.status, "K": res.K, "target_mean": list(res.target_mean)}
        if res.diverged_step is not None:
            entry["diverged_step"] = res.diverged_step
        if res.xK is not None:
            entry["final_mean"] = res.xK.mean(axis=0).tolist()
            entry["distance_to_target"] = res.distance
            _points_csv(sub / "x0.csv", ParticleBatch(res.x0, 0, "source"), cfg.seed)
            _points_csv(sub / "xK.csv", ParticleBatch(res.xK, res.K, "source"), cfg.seed)
            scatter_svg(sub / "particles.svg", [("source", res.x0), (f"after {res.K} steps", res.xK)],
                        title=f"stale estimator, {which} pair")
        if res.losses:
            entry["final_loss"] = float(res.losses[-1])
        summary[f"stale_{which}"] = entry

    sub = out / "flow_guided"
    sub.mkdir()
    c = cfg["chasm"]
    target = Gaussian(c["far_mean"], c["target_var"])
    state, failure = _train_run(cfg, sub, target, ex.chasm_source(cfg))
    if failure is not None:
        summary["flow_guided"] = failure
        _json(out / "summary.json", summary)
        return EXIT_NUMERIC
    traj = trajectory_of_means(state)
    with open(sub / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"mean_{i}" for i in range(len(traj[0][1]))])
        for step, m in traj:
            w.writerow([step] + [repr(float(v)) for v in m])
    means = np.array([m for _, m in traj])
    line_svg(sub / "trajectory.svg", [("flowed mean", means[:, 0], means[:, 1])],
             title="flow-guided training: mean of the flowed batch")
    final = means[-1]
    summary["flow_guided"] = {"status": "ok", "final_mean": final.tolist(),
                              "distance_to_target": float(np.linalg.norm(final - c["far_mean"]))}
    _json(out / "summary.json", summary)
    return EXIT_OK


def prepare_sweep(args):
    ck = load_checkpoint(args.ckpt)
    cfg = _load(args, ck, training=False)
    target = cfg.target()
    return cfg, (ck, target)


def cmd_sweep(cfg: RunConfig, out: Path, ck, target) -> int:
    s = cfg["sweep"]
    totals = list(range(s["k_min"], s["k_max"] + 1, s["k_step"]))
    prior = cfg.prior(target)
    model = _model_of(ck, cfg["experiment"]["use_ema"])
    n = cfg["experiment"]["n_samples"]
    reference = ex.reference_draws(target, cfg["experiment"]["eval_n"], cfg.seed)
    per_seed = [ex.k_sweep(model, prior, cfg.flow_config(), reference, totals, n, cfg.seed + j)
                for j in range(s["seeds"])]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["total_steps", "energy_distance"] + [f"energy_distance_seed{cfg.seed + j}"
                                                         for j in range(s["seeds"])])
        for i, total in enumerate(totals):
            eds = [rows[i][1] for rows in per_seed]
            w.writerow([total, repr(float(np.mean(eds)))] + [repr(float(e)) for e in eds])
    line_svg(out / "sweep.svg",
             [(f"seed {cfg.seed + j}", totals, [e for _, e in rows]) for j, rows in enumerate(per_seed)],
             title="energy distance vs total flow steps")
    return EXIT_OK


def prepare_conditional(args):
    ck = load_checkpoint(args.ckpt) if args.ckpt else None
    cfg = _load(args, ck, training=ck is None)
    target = cfg.target()
    clf = ex.build_classifier(cfg, target) if cfg["conditional"]["classifier"] == "analytic" else None
    n_classes = len(target.weights)
    if not 0 <= cfg["conditional"]["class"] < n_classes:
        raise ValidationError(f"[conditional] class: must lie in [0, {n_classes})")
    if cfg.flow_config().divergence.value != "kl":
        raise ValidationError("[flow] divergence: conditional sampling supports kl only")
    return cfg, (ck, target, clf)


def cmd_conditional(cfg: RunConfig, out: Path, ck, target, clf) -> int:
    prior = cfg.prior(target)
    if ck is None:
        state, failure = _train_run(cfg, out, target, prior)
        if failure is not None:
            _json(out / "metrics.json", failure)
            return EXIT_NUMERIC
        model = state.eval_model(cfg["experiment"]["use_ema"])
    else:
        model = _model_of(ck, cfg["experiment"]["use_ema"])
    if clf is None:
        clf = ex.build_classifier(cfg, target)
    cond, plain = ex.conditional_pair(model, clf, cfg, prior, cfg["experiment"]["n_samples"])
    n = cfg["conditional"]["class"]
    _points_csv(out / "conditional.csv", cond, cfg.seed)
    _points_csv(out / "unconditional.csv", plain, cfg.seed)
    scatter_svg(out / "conditional.svg", [("unconditional", plain.points), (f"class {n}", cond.points)],
                title=f"class {n}, phi = {cfg['conditional']['phi']}")
    metrics = {"class": n, "phi": cfg["conditional"]["phi"],
               "fraction_nearest_requested": ex.fraction_nearest(cond.points, target.means, n),
               "energy_distance_to_unconditional": energy_distance(cond.points, plain.points)}
    _json(out / "metrics.json", metrics)
    return EXIT_OK


def prepare_translate(args):
    cfg = _load(args)
    if cfg["prior"]["kind"] in ("std_gaussian", "uniform", "ddp"):
        raise ValidationError("[prior] kind: translation needs a dataset source")
    return cfg, (cfg.target(),)


def cmd_translate(cfg: RunConfig, out: Path, target) -> int:
    source = cfg.prior(target)
    state, failure = _train_run(cfg, out, target, source)
    if failure is not None:
        _json(out / "metrics.json", failure)
        return EXIT_NUMERIC
    model = state.eval_model(cfg["experiment"]["use_ema"])
    x0, xt = ex.translate_batch(model, source, cfg.flow_config(), cfg["experiment"]["n_samples"],
                                cfg.seed)
    reference = ex.reference_draws(target, cfg["experiment"]["eval_n"], cfg.seed)
    _points_csv(out / "source.csv", x0, cfg.seed)
    _points_csv(out / "translated.csv", xt, cfg.seed)
    scatter_svg(out / "translation.svg",
                [("source", x0.points), ("target", reference), ("translated", xt.points)],
                title="translation")
    disp = np.linalg.norm(xt.points - x0.points, axis=1)
    metrics = ex.sample_metrics(xt.points, reference)
    metrics.update(mean_displacement=float(disp.mean()),
                   inter_dataset_diameter=ex.cross_diameter(x0.points, reference))
    _json(out / "metrics.json", metrics)
    return EXIT_OK


COMMANDS = {
    "train": (prepare_train, cmd_train),
    "sample": (prepare_sample, cmd_sample),
    "eval": (prepare_eval, cmd_eval),
    "chasm-demo": (prepare_chasm, cmd_chasm),
    "sweep-k": (prepare_sweep, cmd_sweep),
    "conditional": (prepare_conditional, cmd_conditional),
    "translate": (prepare_translate, cmd_translate),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowdre", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n", type=int, help="number of samples")
        sp.add_argument("--K", type=int)
        sp.add_argument("--kappa", type=int)

    for name in ("train", "chasm-demo", "translate"):
        common(sub.add_parser(name))
    sp = sub.add_parser("sample")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp = sub.add_parser("sweep-k")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--k-min", dest="k_min", type=int)
    sp.add_argument("--k-max", dest="k_max", type=int)
    sp.add_argument("--k-step", dest="k_step", type=int)
    sp = sub.add_parser("conditional")
    common(sp)
    sp.add_argument("--ckpt")
    sp.add_argument("--class", dest="cls", type=int)
    sp.add_argument("--phi", type=float)
    sp = sub.add_parser("eval")
    sp.add_argument("a", help="particles CSV")
    sp.add_argument("b", help="reference CSV")
    sp.add_argument("--out")
    sp.add_argument("--bin-width", dest="bin_width", type=float, default=0.1)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    prepare, run = COMMANDS[args.command]
    out = Path(args.out) if args.out else None
    try:
        cfg, extra = prepare(args)
        if out is not None:
            _writable(out)
    except (ConfigError, ValidationError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if cfg is not None:
            (out / "resolved.ini").write_text(resolved_text(cfg))
    try:
        return run(cfg, out, *extra)
    except (FlowError, TrainingDiverged, FloatingPointError) as exc:
        report = {"status": "numerical_failure", "message": str(exc),
                  "step": getattr(exc, "step", None)}
        if out is not None:
            _json(out / "failure.json", report)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
