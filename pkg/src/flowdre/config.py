"""INI run configuration: schema, parsing, validation and resolved-config output.

Every key has a default, so a config file only lists what it changes.  Unknown
sections and keys are rejected.  ``resolved_text`` writes every key back out so
a run can be replayed from its own output directory.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .divergences import ConfigError
from .flow import FlowConfig, read_points
from .priors import (Empirical, Gaussian, GaussianMixture, StdGaussian, SwissRoll2D, TwoMoons,
                     UniformBox, fit_ddp, sample_target)
from .trainer import TrainConfig


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(x) for x in s.replace(" ", "").split(",") if x)


def _floats(s):
    return tuple(float(x) for x in s.replace(" ", "").split(",") if x)


def _points(s):
    # "x,y; x,y"
    return tuple(_floats(p) for p in s.split(";") if p.strip())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(_fmt(p) for p in v)
        return ", ".join(_fmt(x) for x in v)
    return str(v)


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {
        "name": (str, "run"),
        "n_samples": (int, 2000),
        "eval_n": (int, 2000),
        "snapshot_every": (int, 0),
        "use_ema": (_bool, True),
    },
    "train": {
        "objective": (str, "lsif"),
        "batch_size": (int, 256),
        "steps": (int, 1000),
        "lr": (float, 1e-4),
        "lr_decay": (float, 0.1),
        "milestones": (_ints, (800, 900)),
        "ema_decay": (float, 0.998),
        "mode": (str, "flow_guided"),
        "seed": (int, 0),
        "log_every": (int, 1),
        "hidden": (_ints, (128, 128, 128)),
        "activation": (str, "softplus"),
        "out_scale": (float, 1.0),
    },
    "flow": {
        "divergence": (str, "pearson_chi2"),
        "eta": (float, 3.0),
        "nu": (float, 1e-2),
        "K": (int, 100),
        "kappa": (int, 20),
        "langevin_consistent": (_bool, False),
        "gamma": (float, 1.0),
    },
    "target": {
        "kind": (str, "swiss_roll"),
        "mean": (_floats, (0.0, 0.0)),
        "var": (float, 0.1),
        "weights": (_floats, (0.5, 0.5)),
        "means": (_points, ((-1.0, -1.0), (1.0, 1.0))),
        "noise": (float, 0.05),
        "scale": (float, 2.0),
        "n": (int, 5000),
        "path": (str, ""),
    },
    "prior": {
        "kind": (str, "std_gaussian"),
        "low": (_floats, (-1.0, -1.0)),
        "high": (_floats, (1.0, 1.0)),
        "mean": (_floats, (0.0, 0.0)),
        "var": (float, 0.1),
        "weights": (_floats, (0.5, 0.5)),
        "means": (_points, ((-1.0, -1.0), (1.0, 1.0))),
        "noise": (float, 0.05),
        "scale": (float, 2.0),
        "n": (int, 5000),
        "path": (str, ""),
        "jitter": (float, 1e-6),
    },
    "conditional": {
        "class": (int, 0),
        "phi": (float, 0.1),
        "classifier": (str, "analytic"),
        "classifier_steps": (int, 2000),
        "classifier_hidden": (_ints, (64, 64)),
    },
    "sweep": {
        "k_min": (int, 60),
        "k_max": (int, 180),
        "k_step": (int, 20),
        "seeds": (int, 1),
    },
    "chasm": {
        "source_var": (float, 0.1),
        "source_n": (int, 5000),
        "target_var": (float, 0.1),
        "near_mean": (_floats, (1.0, 1.0)),
        "far_mean": (_floats, (6.0, 6.0)),
        "near_K": (int, 15),
        "far_K": (int, 400),
        "stale_objective": (str, "lr"),
        "stale_divergence": (str, "kl"),
        "stale_eta": (float, 1.0 / 150.0),
        "stale_nu": (float, 1e-2),
        "stale_steps": (int, 3000),
        "stale_lr": (float, 1e-3),
    },
}

TARGET_KINDS = ("gaussian", "mixture", "swiss_roll", "two_moons", "csv")
PRIOR_KINDS = ("std_gaussian", "uniform", "ddp") + TARGET_KINDS


@dataclass(frozen=True)
class RunConfig:
    values: dict  # section -> key -> parsed value

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["train"]["seed"]

    def replace(self, section: str, **kw) -> "RunConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        for k, v in kw.items():
            if k not in SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {k!r}")
            vals[section][k] = v
        return RunConfig(vals)

    # --- typed views ----------------------------------------------------

    def flow_config(self) -> FlowConfig:
        f = self.values["flow"]
        return FlowConfig(f["divergence"], f["eta"], f["nu"], f["K"], f["kappa"],
                          f["langevin_consistent"], f["gamma"])

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(objective=t["objective"], flow=self.flow_config(),
                           batch_size=t["batch_size"], steps=t["steps"], lr=t["lr"],
                           lr_decay=t["lr_decay"], milestones=t["milestones"],
                           ema_decay=t["ema_decay"], mode=t["mode"], seed=t["seed"],
                           log_every=t["log_every"], hidden=t["hidden"],
                           activation=t["activation"], out_scale=t["out_scale"])

    def target(self):
        return build_distribution("target", self.values["target"], self.seed)

    def prior(self, target=None):
        p = self.values["prior"]
        if p["kind"] == "ddp":
            if target is None:
                target = self.target()
            pts = _draw(target, self.values["target"]["n"], _sub_rng(self.seed, "ddp"))
            return fit_ddp(pts, p["jitter"])
        if p["kind"] == "std_gaussian":
            return StdGaussian(_dim_of(self.values["target"], self.seed, target))
        if p["kind"] == "uniform":
            return UniformBox(p["low"], p["high"])
        spec = build_distribution("prior", p, self.seed)
        if isinstance(spec, Empirical):
            return spec
        return Empirical(sample_target(spec, p["n"], _sub_rng(self.seed, "prior")), p["kind"])


def _sub_rng(seed, tag):
    # independent streams for data-set construction, keyed by name
    return np.random.default_rng([seed, sum(ord(c) * 31 ** i for i, c in enumerate(tag)) % 2**32])


def _draw(target, n, rng):
    if isinstance(target, Empirical):
        return target.points
    return sample_target(target, n, rng)


def _dim_of(tsec, seed, target):
    if target is None:
        target = build_distribution("target", tsec, seed)
    return target.dim


def build_distribution(section, sec, seed):
    kind = sec["kind"]
    if kind == "gaussian":
        return Gaussian(sec["mean"], sec["var"])
    if kind == "mixture":
        return GaussianMixture(sec["weights"], sec["means"], sec["var"])
    if kind == "swiss_roll":
        return SwissRoll2D(sec["noise"], sec["scale"])
    if kind == "two_moons":
        return TwoMoons(sec["noise"])
    if kind == "csv":
        if not sec["path"]:
            raise ConfigError(f"[{section}] path: required when kind = csv")
        return Empirical(read_points(sec["path"]), "csv")
    raise ConfigError(f"[{section}] kind: unknown value {kind!r}")


def parse_config(text: str = "", training: bool = True) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep K distinct from k
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            parser = SCHEMA[section][key][0]
            try:
                values[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from exc
    cfg = RunConfig(values)
    validate(cfg, training)
    return cfg


def load_config(path, training: bool = True) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), training)


def validate(cfg: RunConfig, training: bool = True) -> None:
    """Build every typed object once so errors surface before any output is written.

    ``training=False`` checks only the flow settings, for commands that load a checkpoint.
    """
    for section, key, lo in (("experiment", "n_samples", 1), ("experiment", "eval_n", 1),
                             ("experiment", "snapshot_every", 0), ("target", "n", 2),
                             ("prior", "n", 1), ("sweep", "seeds", 1), ("sweep", "k_step", 1),
                             ("sweep", "k_min", 0), ("chasm", "source_n", 1),
                             ("chasm", "stale_steps", 1), ("conditional", "classifier_steps", 1)):
        if cfg[section][key] < lo:
            raise ConfigError(f"[{section}] {key}: must be >= {lo}")
    if cfg["sweep"]["k_max"] < cfg["sweep"]["k_min"]:
        raise ConfigError("[sweep] k_max: must be >= k_min")
    if cfg["target"]["kind"] not in TARGET_KINDS:
        raise ConfigError(f"[target] kind: must be one of {', '.join(TARGET_KINDS)}")
    if cfg["prior"]["kind"] not in PRIOR_KINDS:
        raise ConfigError(f"[prior] kind: must be one of {', '.join(PRIOR_KINDS)}")
    if cfg["conditional"]["classifier"] not in ("analytic", "learned"):
        raise ConfigError("[conditional] classifier: must be analytic or learned")
    try:
        cfg.train_config() if training else cfg.flow_config()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[train]/[flow]: {exc}") from exc
    try:
        target = cfg.target()
        prior = cfg.prior(target)
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"invalid distribution settings: {exc}") from exc
    if prior.dim != target.dim:
        raise ConfigError(f"[prior] dimension {prior.dim} differs from [target] dimension {target.dim}")


def resolved_text(cfg: RunConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_fmt(cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)
