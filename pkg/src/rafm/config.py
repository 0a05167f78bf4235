"""INI experiment configs: strict parsing, protocol defaults, canonical rendering.

Unknown sections or keys are rejected. The resolved config is rendered back
to text in a fixed order; that text is what each run directory stores.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from rafm.flow_matching import MethodSpec

DEFAULT_SEEDS = (8925, 77395, 65457)

# variant label -> (method, radial_mode, project)
VARIANTS = {
    "gaussian_fm": ("gaussian_fm", "empirical", False),
    "source_only": ("source_only", "empirical", False),
    "source_only_oracle": ("source_only", "oracle", False),
    "rafm": ("rafm", "empirical", True),
    "rafm_oracle": ("rafm", "oracle", True),
    "rafm_noproj": ("rafm", "empirical", False),
}

# keys each dataset kind accepts besides kind and label, in rendering order
DATASET_KINDS = {
    "student_t": ("n_samples", "d", "nu", "matrix_seed", "data_seed", "split_seed"),
    "aniso_gauss": ("n_samples", "d", "matrix_seed", "data_seed", "split_seed"),
    "toy2d": ("n_samples", "modes", "kappa", "scale", "data_seed", "split_seed"),
    "piv": ("source", "grid_ny", "grid_nx", "trunc", "split_seed"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    label: str
    n_samples: int = 0
    matrix_seed: int = 42
    data_seed: int = 0
    split_seed: int = 0
    d: int = 0
    nu: float = 3.0
    modes: int = 4
    kappa: float = 5.0
    scale: float = 1.0
    grid_ny: int = 0
    grid_nx: int = 0
    trunc: int = 0  # 0 keeps every coordinate
    source: str = ""

    @property
    def dim(self) -> int:
        if self.kind == "toy2d":
            return 2
        if self.kind == "piv":
            return self.trunc or self.grid_ny * self.grid_nx
        return self.d


@dataclass(frozen=True)
class Variant:
    label: str
    spec: MethodSpec

    @classmethod
    def parse(cls, label: str) -> "Variant":
        if label not in VARIANTS:
            raise ConfigError(f"unknown method variant {label!r}; choose from {sorted(VARIANTS)}")
        method, mode, project = VARIANTS[label]
        return cls(label, MethodSpec(method, mode, project))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    methods: tuple[Variant, ...]
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    train_steps: int = 10_000
    batch: int = 256
    lr: float = 1e-3
    checkpoint_every: int = 5_000
    sampler_steps: int = 128
    n_gen: int = 10_000
    n_proj: int = 500
    angular: bool = True
    mmd: bool = False
    results: str = "results"

    def render(self) -> str:
        return render(self)


# section -> key -> (attribute, type); dataset keys are checked separately
_SCHEMA = {
    "train": {"steps": ("train_steps", int), "batch": ("batch", int), "lr": ("lr", float),
              "checkpoint_every": ("checkpoint_every", int)},
    "sampler": {"steps": ("sampler_steps", int)},
    "eval": {"n_gen": ("n_gen", int), "n_proj": ("n_proj", int),
             "angular": ("angular", bool), "mmd": ("mmd", bool)},
    "output": {"results": ("results", str)},
}
_DATASET_TYPES = {"label": str, "n_samples": int, "matrix_seed": int, "data_seed": int,
                  "split_seed": int, "d": int, "nu": float, "modes": int, "kappa": float,
                  "scale": float, "grid_ny": int, "grid_nx": int, "trunc": int, "source": str}


def _convert(raw: str, typ, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from None


def _int_list(raw: str, where: str) -> tuple[int, ...]:
    items = [s for s in (p.strip() for p in raw.split(",")) if s]
    if not items:
        raise ConfigError(f"{where}: empty list")
    return tuple(_convert(s, int, where) for s in items)


def _parse_dataset(sec) -> DatasetSpec:
    keys = set(sec.keys())
    if "kind" not in keys:
        raise ConfigError("[dataset] needs a kind")
    kind = sec["kind"].strip()
    if kind not in DATASET_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    allowed = {"kind", "label", *DATASET_KINDS[kind]}
    unknown = keys - allowed
    if unknown:
        raise ConfigError(f"unknown [dataset] keys for {kind}: {sorted(unknown)}")
    required = {"student_t": {"d", "n_samples"}, "aniso_gauss": {"d", "n_samples"},
                "toy2d": {"n_samples"}, "piv": {"grid_ny", "grid_nx", "source"}}[kind]
    missing = required - keys
    if missing:
        raise ConfigError(f"[dataset] {kind} is missing {sorted(missing)}")
    values = {}
    for key in keys - {"kind"}:
        values[key] = _convert(sec[key], _DATASET_TYPES[key], f"dataset.{key}")
    if "label" not in values:
        values["label"] = _default_label(kind, values)
    return DatasetSpec(kind=kind, **values)


def _default_label(kind: str, values: dict) -> str:
    if kind in ("student_t", "aniso_gauss"):
        return f"{kind}_d{values['d']}"
    if kind == "piv":
        d = values.get("trunc") or values["grid_ny"] * values["grid_nx"]
        return f"piv_d{d}"
    return kind


def parse(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    sections = set(cp.sections())
    unknown = sections - {"dataset", "experiment", *_SCHEMA}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    if "dataset" not in sections or "experiment" not in sections:
        raise ConfigError("config needs [dataset] and [experiment] sections")

    kwargs: dict = {"dataset": _parse_dataset(cp["dataset"])}
    exp = cp["experiment"]
    bad = set(exp.keys()) - {"methods", "seeds"}
    if bad:
        raise ConfigError(f"unknown [experiment] keys {sorted(bad)}")
    if "methods" not in exp:
        raise ConfigError("[experiment] needs methods")
    labels = [s.strip() for s in exp["methods"].split(",") if s.strip()]
    if len(set(labels)) != len(labels) or not labels:
        raise ConfigError("methods must be a non-empty list without repeats")
    kwargs["methods"] = tuple(Variant.parse(s) for s in labels)
    if "seeds" in exp:
        kwargs["seeds"] = _int_list(exp["seeds"], "experiment.seeds")
        if len(set(kwargs["seeds"])) != len(kwargs["seeds"]):
            raise ConfigError("seeds must be distinct")

    for name, schema in _SCHEMA.items():
        if name not in sections:
            continue
        for key in cp[name]:
            if key not in schema:
                raise ConfigError(f"unknown key {name}.{key}")
            attr, typ = schema[key]
            kwargs[attr] = _convert(cp[name][key], typ, f"{name}.{key}")
    cfg = ExperimentConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    positive = {"train.batch": cfg.batch, "train.checkpoint_every": cfg.checkpoint_every,
                "sampler.steps": cfg.sampler_steps, "eval.n_gen": cfg.n_gen,
                "eval.n_proj": cfg.n_proj}
    for name, value in positive.items():
        if value < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.train_steps < 0:
        raise ConfigError("train.steps must be >= 0")
    ds = cfg.dataset
    if ds.kind != "piv" and ds.n_samples < 5:
        raise ConfigError("dataset.n_samples must be >= 5")
    if ds.kind == "piv" and any(v.spec.radial_mode == "oracle" for v in cfg.methods):
        raise ConfigError("piv has no oracle radial law")


def load(path: str | Path) -> ExperimentConfig:
    return parse(Path(path).read_text())


def render(cfg: ExperimentConfig) -> str:
    ds = cfg.dataset
    lines = ["[dataset]", f"kind = {ds.kind}", f"label = {ds.label}"]
    lines += [f"{k} = {_fmt(getattr(ds, k))}" for k in DATASET_KINDS[ds.kind]]
    lines += ["", "[experiment]",
              "methods = " + ", ".join(v.label for v in cfg.methods),
              "seeds = " + ", ".join(str(s) for s in cfg.seeds), ""]
    for name, schema in _SCHEMA.items():
        lines.append(f"[{name}]")
        lines += [f"{key} = {_fmt(getattr(cfg, attr))}" for key, (attr, _) in schema.items()]
        lines.append("")
    return "\n".join(lines)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
