"""Run configuration: one JSON tree holding every module config.

Values resolve as defaults, then the config file, then command-line
overrides. All randomness derives from the single root ``seed`` via
:func:`derive_seed`.
"""

import copy
import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .data_sim import MP_TARGET_PSNR, NOISE_LEVELS, QE_TARGET_PSNR, NoiseLevelSpec
from .inference import InferenceConfig
from .metrics import AnalysisConfig
from .networks import DiscriminatorConfig, GeneratorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def derive_seed(root: int, module: str, index: int = 0) -> int:
    """Sub-seed for ``module``: ``(root + crc32(module) + index) mod 2**32``."""
    return (int(root) + zlib.crc32(module.encode()) + int(index)) % 2**32


@dataclass
class Paths:
    dataset: str = "data"
    checkpoints: str = "runs/checkpoint"
    predictions: str = "runs/predictions"
    reports: str = "runs/reports"


@dataclass
class LesionConfig:
    count: int = 6
    radius: tuple = (3.0, 5.0)
    t1_delta: float = -0.35
    t2_delta: float = 0.45


@dataclass
class DataConfig:
    shape: tuple = (16, 64, 64)
    splits: dict = field(default_factory=lambda: {"train": 20, "val": 4, "test": 6})
    coverage: float = 0.3
    center_fraction: float = 0.08
    mask_density: str = "gaussian"
    smoothing: float = 0.8
    # noise on the training/validation inputs; None uses the calibrated NL0
    train_sigma: float | None = None
    # per-level PSNR targets; None picks the task preset
    noise_targets: list | None = None
    slab_depth: int = 3
    lesion: LesionConfig = field(default_factory=LesionConfig)

    def targets(self, task):
        if self.noise_targets is not None:
            return list(self.noise_targets)
        return list(QE_TARGET_PSNR if task == "QE" else MP_TARGET_PSNR)


# TrainConfig's task and seed come from the top level of the run config
_TRAIN_EXCLUDED = ("task", "seed")
_INFER_EXCLUDED = ("seed",)


@dataclass
class RunConfig:
    task: str = "QE"
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=lambda: DiscriminatorConfig(layer_widths=(32, 64, 128, 128)))
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    # explicit noise levels skip calibration
    noise_levels: list | None = None

    def __post_init__(self):
        if self.task not in ("QE", "MP"):
            raise ConfigError(f"task must be QE or MP, got {self.task!r}")
        if self.generator.in_channels != self.data.slab_depth:
            raise ConfigError("generator.in_channels must equal data.slab_depth")
        self.train = dataclasses.replace(self.train, task=self.task, seed=derive_seed(self.seed, "training"))
        self.inference = dataclasses.replace(self.inference, seed=derive_seed(self.seed, "inference"))

    @property
    def domain(self):
        return "kspace" if self.task == "QE" else "image"

    def noise_specs(self):
        if self.noise_levels is None:
            return None
        return [NoiseLevelSpec(**d) for d in self.noise_levels]

    def to_dict(self) -> dict:
        return _to_tree(self)

    @classmethod
    def from_dict(cls, tree: dict) -> "RunConfig":
        return _from_tree(cls, tree, "")

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())


def _to_tree(obj):
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            if (type(obj) is TrainConfig and f.name in _TRAIN_EXCLUDED) or \
               (type(obj) is InferenceConfig and f.name in _INFER_EXCLUDED):
                continue
            out[f.name] = _to_tree(getattr(obj, f.name))
        return out
    if isinstance(obj, (list, tuple)):
        return [_to_tree(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_tree(v) for k, v in obj.items()}
    return obj


_NESTED = {
    (RunConfig, "paths"): Paths,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "generator"): GeneratorConfig,
    (RunConfig, "discriminator"): DiscriminatorConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "inference"): InferenceConfig,
    (RunConfig, "analysis"): AnalysisConfig,
    (DataConfig, "lesion"): LesionConfig,
}

_TUPLES = {(DataConfig, "shape"), (LesionConfig, "radius"), (DiscriminatorConfig, "layer_widths"),
           (TrainConfig, "adam_betas")}


def _from_tree(cls, tree, prefix):
    if not isinstance(tree, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(tree) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in tree.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = _from_tree(sub, value, f"{prefix}{key}.")
        elif (cls, key) in _TUPLES and value is not None:
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def set_dotted(tree: dict, key: str, value):
    """Set ``a.b.c`` in a nested dict, creating intermediate mappings."""
    parts = key.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a mapping")
    node[parts[-1]] = value


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    """Resolve defaults < file at ``path`` < ``overrides`` (dotted keys)."""
    tree = RunConfig().to_dict()
    if path is not None:
        try:
            file_tree = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        tree = _deep_merge(tree, file_tree)
    for key, value in (overrides or {}).items():
        set_dotted(tree, key, value)
    return RunConfig.from_dict(tree)


__all__ = ["ConfigError", "RunConfig", "DataConfig", "LesionConfig", "Paths", "derive_seed",
           "load_config", "set_dotted", "NOISE_LEVELS"]
