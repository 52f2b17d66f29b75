"""Run configuration: a YAML tree mirroring the component configs, validated as a whole."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError, InvalidSpecError
from .nn.policy import PolicyConfig
from .rollout.runner import BatchConfig
from .scene.generate import GeneratorSpec
from .train.ppo import TrainConfig

AGENTS = ("policy", "oracle", "random")


@dataclass
class ScenesSection:
    manifest: Optional[str] = None  # scene set written by gen-scenes; None generates in memory
    train_split: str = "train"
    eval_split: str = "val"
    count: int = 20  # used when manifest is None
    seed: int = 0
    val_fraction: float = 0.2
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)


@dataclass
class RunSection:
    total_frames: int = 2_000_000
    checkpoint_interval: int = 10
    resume: bool = False


@dataclass
class EvalSection:
    checkpoint: Optional[str] = None
    agent: str = "policy"
    episodes_per_scene: int = 25
    seed: int = 0
    batch_size: int = 64


@dataclass
class BenchSection:
    inference_batches: int = 256
    learning: bool = True
    warmup_iterations: int = 1
    batch_sizes: tuple = (1, 4, 16, 64, 256)
    resolutions: tuple = (64,)
    min_frames: int = 1000
    trace_length: int = 1000
    repeats: int = 1


@dataclass
class RunConfig:
    out_dir: str
    seed: int = 0
    scenes: ScenesSection = field(default_factory=ScenesSection)
    batch: BatchConfig = field(default_factory=BatchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    run: RunSection = field(default_factory=RunSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def validate(self) -> list[str]:
        """Every violated constraint, including ones that span sections."""
        problems = [f"batch: {p}" for p in self.batch.validate()]
        problems += [f"train: {p}" for p in self.train.validate(self.batch.num_envs)]
        pconf = dataclasses.replace(self.policy, resolution=self.batch.resolution, channels=self.batch.channels)
        try:
            pconf.validate()
        except InvalidSpecError as e:
            problems += [f"policy: {p}" for p in str(e).split("; ")]
        try:
            self.scenes.generator.validate()
        except InvalidSpecError as e:
            problems.append(f"scenes.generator: {e}")
        if self.scenes.manifest is None:
            if self.scenes.count < 1:
                problems.append("scenes.count must be positive")
            if not 0.0 <= self.scenes.val_fraction < 1.0:
                problems.append("scenes.val_fraction must lie in [0, 1)")
        if self.run.total_frames < 1:
            problems.append("run.total_frames must be positive")
        if self.run.checkpoint_interval < 0:
            problems.append("run.checkpoint_interval must be non-negative")
        if self.eval.agent not in AGENTS:
            problems.append(f"eval.agent must be one of {AGENTS}, got {self.eval.agent!r}")
        if self.eval.episodes_per_scene < 1 or self.eval.batch_size < 1:
            problems.append("eval.episodes_per_scene and eval.batch_size must be positive")
        if self.bench.inference_batches < 1 or self.bench.repeats < 1 or self.bench.min_frames < 1:
            problems.append("bench.inference_batches, bench.repeats and bench.min_frames must be positive")
        if any(b < 1 for b in self.bench.batch_sizes) or any(r < 1 for r in self.bench.resolutions):
            problems.append("bench.batch_sizes and bench.resolutions must be positive")
        return problems

    def policy_config(self) -> PolicyConfig:
        return dataclasses.replace(self.policy, resolution=self.batch.resolution, channels=self.batch.channels)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Build and validate; raises :class:`ConfigError` listing every problem found."""
        problems: list[str] = []
        if not isinstance(d, dict):
            raise ConfigError(["config root must be a mapping"])
        cfg = _build(cls, d, "", problems)
        if cfg is not None:
            # well-formed fields are still checked when others were rejected
            problems += cfg.validate()
        if problems:
            raise ConfigError(problems)
        return cfg


_SECTIONS = {
    "scenes": ScenesSection,
    "batch": BatchConfig,
    "train": TrainConfig,
    "policy": PolicyConfig,
    "run": RunSection,
    "eval": EvalSection,
    "bench": BenchSection,
    "generator": GeneratorSpec,
}
_TUPLES = {"stages", "grid", "batch_sizes", "resolutions"}


def _build(cls, d: dict, prefix: str, problems: list[str]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in d.items():
        path = f"{prefix}{key}"
        if key not in fields:
            problems.append(f"{path}: unknown field")
            continue
        if key in _SECTIONS and dataclasses.is_dataclass(_SECTIONS[key]):
            if value is None:
                continue
            if not isinstance(value, dict):
                problems.append(f"{path}: expected a mapping")
                continue
            section = _build(_SECTIONS[key], value, path + ".", problems)
            if section is not None:
                kwargs[key] = section
            continue
        default = _default_of(fields[key])
        checked = _coerce(value, default, path, problems)
        if checked is not _BAD:
            kwargs[key] = tuple(checked) if key in _TUPLES else checked
    for name, f in fields.items():
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING and name not in kwargs:
            if f"{prefix}{name}" not in " ".join(problems):
                problems.append(f"{prefix}{name}: required field missing")
    try:
        return cls(**kwargs)
    except TypeError:
        return None


_BAD = object()


def _default_of(f: dataclasses.Field) -> Any:
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _coerce(value: Any, default: Any, path: str, problems: list[str]) -> Any:
    """Type-check a leaf against its default; ints widen to floats, nothing else converts."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (tuple, list)):
        ok = isinstance(value, (tuple, list)) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        problems.append(f"{path}: expected {type(default).__name__}, got {value!r}")
        return _BAD
    return value


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def set_path(tree: dict, dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted key path, creating intermediate mappings."""
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = node[k] = {}
        node = nxt
    node[keys[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    """``key.path=value`` with the value read as YAML (so ``4`` is an int, ``[1, 2]`` a list)."""
    if "=" not in item:
        raise ConfigError([f"override {item!r} is not of the form key=value"])
    key, raw = item.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError([f"override {key}: {e}"]) from None


def load_tree(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError([f"{path}: {e.strerror}"]) from None
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError([f"{path}: {e}"]) from None
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    # resolved records name the command that wrote them; that key is informational
    tree.pop("command", None)
    return tree


def resolve(path: Optional[str], overrides: dict[str, Any]) -> RunConfig:
    """File values, then overrides (dotted paths) on top; validated as one tree."""
    tree = copy.deepcopy(load_tree(path))
    for key, value in overrides.items():
        set_path(tree, key, value)
    return RunConfig.from_dict(tree)


def write_resolved(config: RunConfig, out_dir, command: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{command}.config.yaml"
    target.write_text(yaml.safe_dump({"command": command, **config.to_dict()}, sort_keys=False))
    return target
