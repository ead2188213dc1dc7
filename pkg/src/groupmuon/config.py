"""Run and sweep configuration: TOML files in, validated dataclasses out.

A run config has six sections: [model], [optimizer], [grouping], [criterion],
[output], [seeds]. Every key has a documented default; unknown sections or
keys are rejected by name so typos fail loudly instead of silently running
the default. `config_to_toml` emits a canonical file that parses back to an
identical RunConfig (round-trip identity, covered by tests).

Sweep grids live in a separate file with a single [sweep] table whose axes
are (target, rule, group_size) plus a repetitions count; the Cartesian
product is enumerated in fixed axis order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Sequence, Tuple

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .criterion import CriterionParams
from .errors import ConfigFileError
from .harness.model import TASKS, ToyModelConfig
from .harness.train import GROUP_TARGETS, OptimizerSettings
from .matcore import RankPolicy

__all__ = [
    "RunConfig",
    "SweepSpec",
    "DEFAULTS",
    "parse_run_config",
    "load_run_config",
    "config_to_toml",
    "parse_sweep_spec",
    "load_sweep_spec",
    "sweep_cells",
]

OUTPUT_FORMATS = ("csv", "json", "both")

# section -> key -> default; doubles as the unknown-key whitelist
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "model": {
        "num_layers": 2,
        "d_model": 96,
        "num_heads": 12,
        "head_dim": 8,
        "vocab_size": 64,
        "seq_len": 64,
        "task": "copy",
    },
    "optimizer": {
        "kind": "muon_full",
        "whitening": "newton_schulz",
        "momentum_coeff": 0.95,
        "base_lr": 0.02,
        "lr_transfer": False,
        "ns_iterations": 5,
        "pack_qkv": False,
        "nesterov": False,
        "adaptive_lr": 0.003,
        "adaptive_beta1": 0.9,
        "adaptive_beta2": 0.95,
        "adaptive_weight_decay": 0.0,
        "steps": 200,
        "eval_every": 25,
        "batch_size": 16,
        "profile_every": 0,
    },
    "grouping": {
        "target": "qk",
        "group_size": 1,
        "rule": "adjacent",
        "resample_each_step": False,
    },
    "criterion": {
        "beta": 1.0,
        "eta": 0.1,
        "rank_policy": "machine",
        "rank_rel_tol": 1e-10,
    },
    "output": {
        "directory": "runs",
        "format": "csv",
    },
    "seeds": {
        "init": 0,
        "data": 0,
        "grouping": 0,
    },
}


@dataclass(frozen=True)
class RunConfig:
    model: ToyModelConfig
    optimizer: OptimizerSettings
    criterion: CriterionParams
    steps: int
    eval_every: int
    batch_size: int
    profile_every: int
    data_seed: int
    output_dir: str
    output_format: str

    def __post_init__(self):
        if self.output_format not in OUTPUT_FORMATS:
            raise ConfigFileError(
                f"output.format must be one of {OUTPUT_FORMATS}, got {self.output_format!r}"
            )
        if self.steps < 1 or self.eval_every < 1:
            raise ConfigFileError("optimizer.steps and optimizer.eval_every must be >= 1")
        if self.batch_size < 1:
            raise ConfigFileError("optimizer.batch_size must be >= 1")
        if self.profile_every < 0:
            raise ConfigFileError("optimizer.profile_every must be >= 0")
        if self.model.num_heads % self.optimizer.group_size != 0:
            raise ConfigFileError(
                f"grouping.group_size={self.optimizer.group_size} does not divide "
                f"model.num_heads={self.model.num_heads}"
            )
        if self.optimizer.resample_each_step and self.optimizer.rule != "random":
            raise ConfigFileError(
                "grouping.resample_each_step requires grouping.rule='random'"
            )


@dataclass(frozen=True)
class SweepSpec:
    target: Tuple[str, ...]
    rule: Tuple[str, ...]
    group_size: Tuple[int, ...]
    repetitions: int = 1

    def __post_init__(self):
        for axis in ("target", "rule", "group_size"):
            if not getattr(self, axis):
                raise ConfigFileError(f"empty sweep: axis {axis!r} has no values")
        if self.repetitions < 1:
            raise ConfigFileError("sweep repetitions must be >= 1")
        bad = [t for t in self.target if t not in GROUP_TARGETS]
        if bad:
            raise ConfigFileError(f"unknown sweep target(s) {bad}")


def sweep_cells(spec: SweepSpec) -> List[Tuple[str, str, int, int]]:
    """Deterministic cell order: target, then rule, then group_size, then rep."""
    return [
        (t, r, g, rep)
        for t, r, g, rep in itertools.product(
            spec.target, spec.rule, spec.group_size, range(spec.repetitions)
        )
    ]


def _merged(data: Mapping[str, Any], source: str) -> Dict[str, Dict[str, Any]]:
    for section in data:
        if section not in DEFAULTS:
            raise ConfigFileError(f"{source}: unknown section [{section}]")
        if not isinstance(data[section], Mapping):
            raise ConfigFileError(f"{source}: [{section}] must be a table")
    merged: Dict[str, Dict[str, Any]] = {}
    for section, defaults in DEFAULTS.items():
        given = data.get(section, {})
        for key in given:
            if key not in defaults:
                raise ConfigFileError(f"{source}: unknown key {section}.{key}")
        merged[section] = {**defaults, **given}
    return merged


def _expect(value: Any, types, where: str):
    if isinstance(value, bool) and bool not in (
        types if isinstance(types, tuple) else (types,)
    ):
        raise ConfigFileError(f"{where}: expected {types}, got bool")
    if not isinstance(value, types):
        raise ConfigFileError(f"{where}: expected {types}, got {type(value).__name__}")
    return value


def parse_run_config(data: Mapping[str, Any], source: str = "config") -> RunConfig:
    """Build a validated RunConfig from parsed TOML data."""
    sec = _merged(data, source)
    m, o, g, c, out, seeds = (
        sec["model"], sec["optimizer"], sec["grouping"],
        sec["criterion"], sec["output"], sec["seeds"],
    )
    for key in ("init", "data", "grouping"):
        _expect(seeds[key], int, f"{source}: seeds.{key}")
    if m["task"] not in TASKS:
        raise ConfigFileError(
            f"{source}: model.task must be one of {TASKS}, got {m['task']!r}"
        )
    try:
        model = ToyModelConfig(
            num_layers=_expect(m["num_layers"], int, f"{source}: model.num_layers"),
            d_model=_expect(m["d_model"], int, f"{source}: model.d_model"),
            num_heads=_expect(m["num_heads"], int, f"{source}: model.num_heads"),
            head_dim=_expect(m["head_dim"], int, f"{source}: model.head_dim"),
            vocab_size=_expect(m["vocab_size"], int, f"{source}: model.vocab_size"),
            seq_len=_expect(m["seq_len"], int, f"{source}: model.seq_len"),
            task=m["task"],
            init_seed=seeds["init"],
        )
        optimizer = OptimizerSettings(
            kind=o["kind"],
            whitening=o["whitening"],
            momentum_coeff=float(_expect(o["momentum_coeff"], (int, float), f"{source}: optimizer.momentum_coeff")),
            base_lr=float(_expect(o["base_lr"], (int, float), f"{source}: optimizer.base_lr")),
            lr_transfer=_expect(o["lr_transfer"], bool, f"{source}: optimizer.lr_transfer"),
            ns_iterations=_expect(o["ns_iterations"], int, f"{source}: optimizer.ns_iterations"),
            target=g["target"],
            group_size=_expect(g["group_size"], int, f"{source}: grouping.group_size"),
            rule=g["rule"],
            grouping_seed=seeds["grouping"],
            resample_each_step=_expect(g["resample_each_step"], bool, f"{source}: grouping.resample_each_step"),
            pack_qkv=_expect(o["pack_qkv"], bool, f"{source}: optimizer.pack_qkv"),
            adaptive_lr=float(o["adaptive_lr"]),
            adaptive_beta1=float(o["adaptive_beta1"]),
            adaptive_beta2=float(o["adaptive_beta2"]),
            adaptive_weight_decay=float(o["adaptive_weight_decay"]),
            nesterov=_expect(o["nesterov"], bool, f"{source}: optimizer.nesterov"),
        )
        if c["rank_policy"] not in ("machine", "relative"):
            raise ConfigFileError(
                f"{source}: criterion.rank_policy must be 'machine' or 'relative'"
            )
        criterion = CriterionParams(
            beta=float(_expect(c["beta"], (int, float), f"{source}: criterion.beta")),
            eta=float(_expect(c["eta"], (int, float), f"{source}: criterion.eta")),
            rank_policy=RankPolicy(c["rank_policy"], float(c["rank_rel_tol"])),
        )
    except ConfigFileError:
        raise
    except Exception as exc:
        raise ConfigFileError(f"{source}: {exc}") from exc
    return RunConfig(
        model=model,
        optimizer=optimizer,
        criterion=criterion,
        steps=_expect(o["steps"], int, f"{source}: optimizer.steps"),
        eval_every=_expect(o["eval_every"], int, f"{source}: optimizer.eval_every"),
        batch_size=_expect(o["batch_size"], int, f"{source}: optimizer.batch_size"),
        profile_every=_expect(o["profile_every"], int, f"{source}: optimizer.profile_every"),
        data_seed=seeds["data"],
        output_dir=_expect(out["directory"], str, f"{source}: output.directory"),
        output_format=out["format"],
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFileError(f"{path}: TOML parse error: {exc}") from exc
    return parse_run_config(data, source=str(path))


def parse_sweep_spec(data: Mapping[str, Any], source: str = "sweep") -> SweepSpec:
    keys = {"target", "rule", "group_size", "repetitions"}
    table = data.get("sweep")
    if table is None or not isinstance(table, Mapping):
        raise ConfigFileError(f"{source}: missing [sweep] table")
    for section in data:
        if section != "sweep":
            raise ConfigFileError(f"{source}: unknown section [{section}]")
    for key in table:
        if key not in keys:
            raise ConfigFileError(f"{source}: unknown key sweep.{key}")

    def _axis(name, elem_type):
        values = table.get(name, [])
        if not isinstance(values, Sequence) or isinstance(values, str):
            raise ConfigFileError(f"{source}: sweep.{name} must be a list")
        for v in values:
            _expect(v, elem_type, f"{source}: sweep.{name} entry")
        return tuple(values)

    return SweepSpec(
        target=_axis("target", str),
        rule=_axis("rule", str),
        group_size=_axis("group_size", int),
        repetitions=_expect(table.get("repetitions", 1), int, f"{source}: sweep.repetitions"),
    )


def load_sweep_spec(path) -> SweepSpec:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigFileError(f"cannot read sweep {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFileError(f"{path}: TOML parse error: {exc}") from exc
    return parse_sweep_spec(data, source=str(path))


def _toml_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigFileError(f"cannot serialize {type(value).__name__} to TOML")


def _run_config_sections(cfg: RunConfig) -> Dict[str, Dict[str, Any]]:
    m, o, c = cfg.model, cfg.optimizer, cfg.criterion
    return {
        "model": {
            "num_layers": m.num_layers,
            "d_model": m.d_model,
            "num_heads": m.num_heads,
            "head_dim": m.head_dim,
            "vocab_size": m.vocab_size,
            "seq_len": m.seq_len,
            "task": m.task,
        },
        "optimizer": {
            "kind": o.kind,
            "whitening": o.whitening,
            "momentum_coeff": o.momentum_coeff,
            "base_lr": o.base_lr,
            "lr_transfer": o.lr_transfer,
            "ns_iterations": o.ns_iterations,
            "pack_qkv": o.pack_qkv,
            "nesterov": o.nesterov,
            "adaptive_lr": o.adaptive_lr,
            "adaptive_beta1": o.adaptive_beta1,
            "adaptive_beta2": o.adaptive_beta2,
            "adaptive_weight_decay": o.adaptive_weight_decay,
            "steps": cfg.steps,
            "eval_every": cfg.eval_every,
            "batch_size": cfg.batch_size,
            "profile_every": cfg.profile_every,
        },
        "grouping": {
            "target": o.target,
            "group_size": o.group_size,
            "rule": o.rule,
            "resample_each_step": o.resample_each_step,
        },
        "criterion": {
            "beta": c.beta,
            "eta": c.eta,
            "rank_policy": c.rank_policy.kind,
            "rank_rel_tol": c.rank_policy.rel_tol,
        },
        "output": {
            "directory": cfg.output_dir,
            "format": cfg.output_format,
        },
        "seeds": {
            "init": m.init_seed,
            "data": cfg.data_seed,
            "grouping": o.grouping_seed,
        },
    }


def config_to_toml(cfg: RunConfig) -> str:
    """Canonical TOML text; parse_run_config(parse(text)) == cfg."""
    lines: List[str] = []
    for section, table in _run_config_sections(cfg).items():
        lines.append(f"[{section}]")
        for key, value in table.items():
            lines.append(f"{key} = {_toml_scalar(value)}")
        lines.append("")
    return "\n".join(lines)
