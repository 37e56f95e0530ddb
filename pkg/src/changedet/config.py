"""Run configuration: dataclasses, YAML round-trip, end-to-end validation.

One config file drives every command. All defaults live here, nowhere else.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid configuration. Message starts with the dotted field path."""


def _require(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def default_branch_channels(branch_index: int) -> list[int]:
    """Aligned-channel budget for one aggregation branch.

    Peaks at 64 on the branch's own stage and halves per octave of distance,
    floored at 16. Branch 2 gives the canonical [32, 64, 32, 16] split.
    """
    return [max(16, 64 >> abs(j - branch_index)) for j in (1, 2, 3, 4)]


@dataclass
class EncoderConfig:
    stage_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    stem_channels: int = 16
    input_channels: int = 3
    variant_name: str = "tiny"
    # True: stem = stride-2 conv + max pool (stage 1 keeps resolution);
    # False: stem = stride-2 conv only (stage 1 downsamples itself).
    stem_pool: bool = False

    def validate(self, path="encoder"):
        _require(len(self.stage_channels) == 4, f"{path}.stage_channels",
                 "exactly 4 stages required")
        for i, c in enumerate(self.stage_channels):
            _require(isinstance(c, int) and c > 0, f"{path}.stage_channels[{i}]",
                     "must be a positive integer")
        _require(self.stem_channels > 0, f"{path}.stem_channels", "must be positive")
        _require(self.input_channels > 0, f"{path}.input_channels", "must be positive")


ENCODER_PRESETS = {
    "tiny": EncoderConfig([16, 32, 64, 128], stem_channels=16, variant_name="tiny"),
    "resnet18-like": EncoderConfig([64, 128, 256, 512], stem_channels=64,
                                   variant_name="resnet18-like", stem_pool=True),
    "regnet-like": EncoderConfig([48, 120, 336, 888], stem_channels=32,
                                 variant_name="regnet-like"),
}


def encoder_preset(name: str) -> EncoderConfig:
    if name not in ENCODER_PRESETS:
        raise ConfigError(f"encoder.variant_name: unknown preset {name!r}, "
                          f"choose from {sorted(ENCODER_PRESETS)}")
    return dataclasses.replace(ENCODER_PRESETS[name])


@dataclass
class CsaBranchConfig:
    branch_index: int
    aligned_channels: list[int] = None
    out_channels: int = 0

    def __post_init__(self):
        if self.aligned_channels is None:
            self.aligned_channels = default_branch_channels(self.branch_index)

    def validate(self, path="csa"):
        _require(1 <= self.branch_index <= 4, f"{path}.branch_index", "must be 1..4")
        _require(len(self.aligned_channels) == 4, f"{path}.aligned_channels",
                 "must list 4 channel counts")
        for i, c in enumerate(self.aligned_channels):
            _require(isinstance(c, int) and c > 0, f"{path}.aligned_channels[{i}]",
                     "must be a positive integer")
        _require(self.out_channels > 0, f"{path}.out_channels", "must be positive")


@dataclass
class MsfConfig:
    # Width of each cascade conv; None keeps the level's channel count.
    mid_channels: int | None = None
    # Feed the fourth cascade conv from the second output instead of the
    # third (non-cascade wiring kept available for comparison runs).
    fourth_from_second: bool = False

    def validate(self, path="msf"):
        if self.mid_channels is not None:
            _require(self.mid_channels > 0, f"{path}.mid_channels", "must be positive")


@dataclass
class EsaConfig:
    reduction_ratio: int = 4
    # None: one head per 32 channels (at least one).
    head_count: int | None = None

    def validate(self, path="esa"):
        _require(self.reduction_ratio >= 1, f"{path}.reduction_ratio", "must be >= 1")
        if self.head_count is not None:
            _require(self.head_count >= 1, f"{path}.head_count", "must be >= 1")


@dataclass
class AblationConfig:
    use_csa: bool = True
    use_msf: bool = True
    use_esa: bool = True


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    csa_branches: list[CsaBranchConfig] = None
    msf: MsfConfig = field(default_factory=MsfConfig)
    esa: EsaConfig = field(default_factory=EsaConfig)
    use_csa: bool = True
    use_msf: bool = True
    use_esa: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        if self.csa_branches is None:
            self.csa_branches = [
                CsaBranchConfig(k, out_channels=self.encoder.stage_channels[k - 1])
                for k in (1, 2, 3, 4)
            ]

    def validate(self, path="model"):
        self.encoder.validate(f"{path}.encoder")
        _require(len(self.csa_branches) == 4, f"{path}.csa_branches",
                 "exactly 4 branches required")
        for i, b in enumerate(self.csa_branches):
            b.validate(f"{path}.csa_branches[{i}]")
            _require(b.branch_index == i + 1, f"{path}.csa_branches[{i}].branch_index",
                     f"must equal {i + 1} (branches are ordered)")
            # The decoder reads per-level channels from the backbone, so the
            # aggregated maps must keep the stage widths.
            _require(b.out_channels == self.encoder.stage_channels[i],
                     f"{path}.csa_branches[{i}].out_channels",
                     f"must equal encoder stage channels ({self.encoder.stage_channels[i]})")
        self.msf.validate(f"{path}.msf")
        self.esa.validate(f"{path}.esa")
        if self.esa.head_count is not None:
            for i, c in enumerate(self.encoder.stage_channels):
                _require(c % self.esa.head_count == 0,
                         f"{path}.esa.head_count",
                         f"must divide stage channels ({c} at stage {i + 1})")
        _require(0.0 < self.threshold < 1.0, f"{path}.threshold", "must be in (0, 1)")


@dataclass
class TrainConfig:
    lr0: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    batch_size: int = 32
    max_iters: int = 50000
    poly_power: float = 0.9
    seed: int = 0
    eval_every: int = 1000
    checkpoint_dir: str = "runs/default"
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def validate(self, path="train"):
        _require(self.lr0 > 0, f"{path}.lr0", "must be positive")
        _require(self.weight_decay >= 0, f"{path}.weight_decay", "must be >= 0")
        _require(0 <= self.beta1 < 1, f"{path}.beta1", "must be in [0, 1)")
        _require(0 <= self.beta2 < 1, f"{path}.beta2", "must be in [0, 1)")
        _require(self.batch_size > 0, f"{path}.batch_size", "must be positive")
        _require(self.max_iters > 0, f"{path}.max_iters", "must be positive")
        _require(self.poly_power > 0, f"{path}.poly_power", "must be positive")
        _require(self.eval_every > 0, f"{path}.eval_every", "must be positive")


@dataclass
class DataConfig:
    root: str = "data"
    patch_size: int | None = None
    # Per-channel standardization constants applied after scaling to [0, 1].
    mean: list[float] = field(default_factory=lambda: [0.5, 0.5, 0.5])
    std: list[float] = field(default_factory=lambda: [0.5, 0.5, 0.5])
    augment: bool = True
    flip_prob: float = 0.5
    crop_prob: float = 0.5
    exchange_prob: float = 0.5
    crop_scale: list[float] = field(default_factory=lambda: [0.8, 1.0])

    def validate(self, path="data"):
        if self.patch_size is not None:
            _require(self.patch_size % 32 == 0, f"{path}.patch_size",
                     "must be divisible by 32")
        _require(len(self.mean) == 3 and len(self.std) == 3, f"{path}.mean/std",
                 "need 3 per-channel values")
        _require(all(s > 0 for s in self.std), f"{path}.std", "must be positive")
        for name in ("flip_prob", "crop_prob", "exchange_prob"):
            _require(0 <= getattr(self, name) <= 1, f"{path}.{name}",
                     "must be in [0, 1]")
        _require(len(self.crop_scale) == 2 and 0 < self.crop_scale[0] <= self.crop_scale[1] <= 1,
                 f"{path}.crop_scale", "must be (lo, hi) with 0 < lo <= hi <= 1")


@dataclass
class SynthConfig:
    patch_size: int = 64
    num_train: int = 500
    num_val: int = 64
    num_test: int = 64
    shape_count_range: list[int] = field(default_factory=lambda: [3, 7])
    noise_level: float = 0.02
    illumination_shift_range: float = 0.08
    seed: int = 0

    def validate(self, path="synth"):
        _require(self.patch_size % 32 == 0, f"{path}.patch_size",
                 "must be divisible by 32")
        for name in ("num_train", "num_val", "num_test"):
            _require(getattr(self, name) > 0, f"{path}.{name}", "must be positive")
        lo, hi = self.shape_count_range
        _require(0 <= lo <= hi, f"{path}.shape_count_range", "must be (lo, hi), lo <= hi")
        _require(self.noise_level >= 0, f"{path}.noise_level", "must be >= 0")
        _require(self.illumination_shift_range >= 0,
                 f"{path}.illumination_shift_range", "must be >= 0")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        self.model.validate("model")
        self.train.validate("train")
        self.data.validate("data")
        self.synth.validate("synth")
        if self.data.patch_size is not None:
            pass  # patch size already checked divisible by 32
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def desk_preset() -> RunConfig:
    """Small CPU-friendly preset: 64x64 patches, tiny encoder, short schedule."""
    cfg = RunConfig(
        model=ModelConfig(encoder=encoder_preset("tiny")),
        train=TrainConfig(batch_size=8, max_iters=2000, eval_every=100,
                          checkpoint_dir="runs/desk"),
        data=DataConfig(root="data/synth", patch_size=None),
        synth=SynthConfig(),
    )
    return cfg.validate()


def full_preset() -> RunConfig:
    """Benchmark-scale defaults: 256x256 patches, wide encoder, long schedule."""
    cfg = RunConfig(
        model=ModelConfig(encoder=encoder_preset("resnet18-like")),
        train=TrainConfig(batch_size=32, max_iters=50000, eval_every=1000,
                          checkpoint_dir="runs/full"),
        data=DataConfig(root="data", patch_size=256),
        synth=SynthConfig(patch_size=256, num_train=2000, num_val=200, num_test=200),
    )
    return cfg.validate()


def apply_ablation(model_cfg: ModelConfig, ablation: AblationConfig) -> ModelConfig:
    """Return a copy of the model config with component toggles applied."""
    return dataclasses.replace(model_cfg, use_csa=ablation.use_csa,
                               use_msf=ablation.use_msf, use_esa=ablation.use_esa)


# ---------------------------------------------------------------------------
# dict / file round-trip


def _build(cls, data, path):
    """Construct dataclass `cls` from a plain dict with path-tagged errors."""
    if data is None:
        data = {}
    _require(isinstance(data, dict), path, f"expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        _require(key in names, f"{path}.{key}", "unknown field")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def run_config_from_dict(data: dict) -> RunConfig:
    _require(isinstance(data, dict), "config", "top level must be a mapping")
    for key in data:
        _require(key in {"model", "train", "data", "synth"}, key, "unknown section")

    model_data = dict(data.get("model") or {})
    enc = model_data.get("encoder")
    if isinstance(enc, str):
        model_data["encoder"] = encoder_preset(enc)
    elif enc is not None:
        model_data["encoder"] = _build(EncoderConfig, enc, "model.encoder")
    branches = model_data.get("csa_branches")
    if branches is not None:
        _require(isinstance(branches, list), "model.csa_branches", "expected a list")
        model_data["csa_branches"] = [
            _build(CsaBranchConfig, b, f"model.csa_branches[{i}]")
            for i, b in enumerate(branches)
        ]
    if "msf" in model_data:
        model_data["msf"] = _build(MsfConfig, model_data["msf"], "model.msf")
    if "esa" in model_data:
        model_data["esa"] = _build(EsaConfig, model_data["esa"], "model.esa")
    model = _build(ModelConfig, model_data, "model")

    train_data = dict(data.get("train") or {})
    if "ablation" in train_data:
        train_data["ablation"] = _build(AblationConfig, train_data["ablation"],
                                        "train.ablation")
    train = _build(TrainConfig, train_data, "train")

    cfg = RunConfig(
        model=model,
        train=train,
        data=_build(DataConfig, data.get("data"), "data"),
        synth=_build(SynthConfig, data.get("synth"), "synth"),
    )
    return cfg.validate()


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML: {exc}") from exc
    return run_config_from_dict(data or {})


def save_run_config(cfg: RunConfig, path: str | Path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


def set_by_path(data: dict, dotted: str, raw_value: str):
    """Override one config entry in a plain dict, `a.b.c=value` style."""
    value = yaml.safe_load(raw_value)
    if isinstance(value, str):
        # yaml leaves exponent forms like 1e12 as strings
        try:
            value = int(value)
        except ValueError:
            try:
                value = float(value)
            except ValueError:
                pass
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value
