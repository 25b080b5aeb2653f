"""Pipeline configuration: dataset profiles plus a flat key = value config file.

A profile fixes the quantities that belong to a dataset: band table,
trial length, channel count, retained rank, task type, and the matching
output activation and loss. The config file selects a profile, points at
the data directories, and may override the tunable knobs (epochs, batch
size, hidden sizes, fusion mode, reference policy, rank mode). Keys that
a profile owns (task, activation, loss, class count for the named
datasets) cannot be contradicted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .filters import BandSpec, seed_rhythm_bands, uniform_bands


def _profile_bands(name: str) -> list[BandSpec]:
    if name == "seed":
        return seed_rhythm_bands()
    return uniform_bands(0.5, 50.5, 2.0)


PROFILES = {
    "seed": dict(
        fs=200.0, trial_seconds=8.0, n_channels=62, rank=48,
        task="classification", n_classes=3,
        output_activation="softmax", loss="cross-entropy",
        temporal_regularizer="batchnorm",
    ),
    "seed-vig": dict(
        fs=200.0, trial_seconds=8.0, n_channels=17, rank=11,
        task="regression", n_classes=1,
        output_activation="sigmoid", loss="mse",
        temporal_regularizer="batchnorm",
    ),
    "bci2a": dict(
        fs=250.0, trial_seconds=4.0, n_channels=22, rank=18,
        task="classification", n_classes=4,
        output_activation="softmax", loss="cross-entropy",
        temporal_regularizer="dropout",
    ),
    "bci2b": dict(
        fs=250.0, trial_seconds=4.0, n_channels=3, rank=3,
        task="classification", n_classes=2,
        output_activation="sigmoid", loss="bce",
        temporal_regularizer="batchnorm",
    ),
}

_PROFILE_LOCKED_KEYS = ("task", "n_classes", "output_activation", "loss")


@dataclass
class PipelineConfig:
    """Everything a pipeline run needs, resolved from profile + config file."""

    profile: str
    fs: float
    trial_seconds: float
    n_channels: int
    rank: int
    bands: list
    task: str
    n_classes: int
    output_activation: str
    loss: str
    temporal_regularizer: str = "batchnorm"

    raw_train_dir: Path | None = None
    raw_test_dir: Path | None = None
    work_dir: Path = Path("work")

    seed: int = 0
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.001
    lstm_layers: int = 3
    lstm_hidden: int = 256
    temporal_embedding_dim: int = 64
    spatial_hidden: int = 512
    spatial_embedding_dim: int = 64
    encoder_hidden: int = 32
    fusion_hidden: int = 128
    fusion_mode: str = "weighted"
    attention_mode: str = "summed-score"
    variant: str = "fused"
    reference_policy: str = "batch-mean"  # or "train-mean"
    rank_mode: str = "fixed"  # or "grid"
    broadband_low: float = 0.5
    broadband_high: float = 70.0
    notch_hz: float = 50.0
    filter_order: int = 5
    constant_channel: str = "error"
    scm_ridge: bool = False
    continue_on_error: bool = False
    ablate_variants: list = field(default_factory=lambda: ["temporal", "spatial", "fused"])

    def __post_init__(self):
        if self.reference_policy not in ("batch-mean", "train-mean"):
            raise ConfigError(f"unknown reference policy {self.reference_policy!r}")
        if self.rank_mode not in ("fixed", "grid"):
            raise ConfigError(f"unknown rank mode {self.rank_mode!r}")
        if self.variant not in ("fused", "temporal", "spatial"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.fusion_mode not in (
            "weighted", "soft-attention", "concatenation", "independent-sigmoid"
        ):
            raise ConfigError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not 1 <= self.rank <= self.n_channels:
            raise ConfigError(
                f"rank {self.rank} is outside [1, {self.n_channels}] for profile {self.profile}"
            )
        if self.broadband_high >= self.fs / 2:
            raise ConfigError(
                f"broadband edge {self.broadband_high} Hz is not below Nyquist {self.fs / 2} Hz"
            )
        if self.notch_hz >= self.fs / 2:
            raise ConfigError(f"notch {self.notch_hz} Hz is not below Nyquist {self.fs / 2} Hz")

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def temporal_feature_dim(self) -> int:
        return 2 * self.n_bands * self.n_channels

    def spatial_feature_dim(self, rank: int | None = None) -> int:
        r = self.rank if rank is None else rank
        return self.n_bands * (r * (r + 1) // 2)

    @property
    def n_outputs(self) -> int:
        if self.task == "classification" and self.loss == "cross-entropy":
            return self.n_classes
        return 1

    def resolve_paths(self, base: Path):
        """Anchor relative paths at the config file's directory."""
        def _resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        self.raw_train_dir = _resolve(self.raw_train_dir)
        self.raw_test_dir = _resolve(self.raw_test_dir)
        self.work_dir = _resolve(self.work_dir)


_BOOL_KEYS = {"continue_on_error", "scm_ridge"}
_INT_KEYS = {
    "seed", "epochs", "batch_size", "lstm_layers", "lstm_hidden", "rank",
    "n_channels", "n_classes", "temporal_embedding_dim", "spatial_hidden",
    "spatial_embedding_dim", "encoder_hidden", "fusion_hidden", "filter_order",
}
_FLOAT_KEYS = {
    "fs", "trial_seconds", "learning_rate", "broadband_low", "broadband_high", "notch_hz",
}
_PATH_KEYS = {"raw_train_dir", "raw_test_dir", "work_dir"}
_LIST_KEYS = {"ablate_variants"}


def _parse_bands(text: str) -> list[BandSpec]:
    bands = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            low, high = part.split("-")
            bands.append(BandSpec(float(low), float(high)))
        except ValueError as exc:
            raise ConfigError(f"cannot parse band {part!r} (expected 'low-high')") from exc
    if not bands:
        raise ConfigError("bands key is present but empty")
    return bands


def parse_config_text(text: str, origin: str = "<config>") -> PipelineConfig:
    """Parse flat ``key = value`` lines into a profile-resolved config."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()

    profile_name = raw.pop("profile", None)
    if profile_name is None:
        raise ConfigError(f"{origin}: missing required key 'profile'")
    if profile_name != "synthetic" and profile_name not in PROFILES:
        raise ConfigError(
            f"{origin}: unknown profile {profile_name!r}; "
            f"choose one of {sorted(PROFILES) + ['synthetic']}"
        )

    if profile_name == "synthetic":
        settings: dict = dict(
            fs=200.0, trial_seconds=2.0, n_channels=4, rank=4,
            task="classification", n_classes=2,
            output_activation="softmax", loss="cross-entropy",
            temporal_regularizer="batchnorm",
        )
        bands = _parse_bands(raw.pop("bands")) if "bands" in raw else uniform_bands(8.0, 24.0, 8.0)
    else:
        settings = dict(PROFILES[profile_name])
        for key in _PROFILE_LOCKED_KEYS:
            if key in raw and raw[key] != str(settings[key]):
                raise ConfigError(
                    f"{origin}: key {key!r} is fixed to {settings[key]!r} by profile "
                    f"{profile_name!r}, cannot set it to {raw[key]!r}"
                )
            raw.pop(key, None)
        if "bands" in raw:
            raise ConfigError(f"{origin}: the band table is fixed by profile {profile_name!r}")
        bands = _profile_bands(profile_name)

    known = {f.name for f in fields(PipelineConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        if key in _BOOL_KEYS:
            if value.lower() not in ("true", "false"):
                raise ConfigError(f"{origin}: key {key!r} must be true or false, got {value!r}")
            settings[key] = value.lower() == "true"
        elif key in _INT_KEYS:
            try:
                settings[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"{origin}: key {key!r} needs an integer, got {value!r}") from exc
        elif key in _FLOAT_KEYS:
            try:
                settings[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{origin}: key {key!r} needs a number, got {value!r}") from exc
        elif key in _PATH_KEYS:
            settings[key] = Path(value)
        elif key in _LIST_KEYS:
            settings[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            settings[key] = value

    try:
        return PipelineConfig(profile=profile_name, bands=bands, **settings)
    except TypeError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    config = parse_config_text(path.read_text(encoding="utf-8"), origin=str(path))
    config.resolve_paths(path.parent.resolve())
    return config
