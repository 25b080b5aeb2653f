"""Pipeline steps behind the CLI: preprocess, features, train, evaluate, ablate.

Every step reads and writes only deterministic artifacts (binary tensor
bundles, sorted-key JSON, CSV), so rerunning with the same config and
seed reproduces outputs byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as dataio
from .config import PipelineConfig
from .errors import ConfigError, DataError
from .filters import (
    apply_filter_zero_phase,
    design_butterworth_bandpass,
    design_filter_bank,
    filter_bank_decompose,
    minmax_normalize,
    notch_filter,
)
from .geometry import (
    pca_spatial_filter,
    reduce_covariance,
    ridge_regularize,
    riemannian_mean,
    scm,
    tangent_vectorize,
)
from .model import ArchitectureConfig, TwoStreamModel, evaluate_model, train_model
from .nnet import load_checkpoint, save_checkpoint
from .spectral import build_feature_sequence, plan_stft

logger = logging.getLogger("spd_bci.pipeline")

SEGMENT_SUFFIX = ".eegs"

# Checkpoint labels: the three stream variants plus fused models with an
# alternative fusion rule, so ablation can compare both axes.
_VARIANT_SPECS = {
    "fused": ("fused", None),
    "temporal": ("temporal", None),
    "spatial": ("spatial", None),
    "concatenation": ("fused", "concatenation"),
    "soft-attention": ("fused", "soft-attention"),
    "independent-sigmoid": ("fused", "independent-sigmoid"),
}
_VARIANT_CODES = {label: float(i) for i, label in enumerate(_VARIANT_SPECS)}


def _variant_label(config: PipelineConfig) -> str:
    if config.variant != "fused" or config.fusion_mode == "weighted":
        return config.variant
    return config.fusion_mode


def _segment_files(directory: Path) -> list[Path]:
    if directory is None:
        raise ConfigError("config does not set the required data directory")
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory {directory} does not exist")
    files = sorted(directory.glob(f"*{SEGMENT_SUFFIX}"))
    if not files:
        raise DataError(f"no {SEGMENT_SUFFIX} files in {directory}: empty dataset")
    return files


def run_preprocess(config: PipelineConfig) -> dict:
    """Broadband filter, notch, and min-max normalize every raw segment."""
    broadband = design_butterworth_bandpass(
        config.broadband_low, config.broadband_high, config.filter_order, config.fs
    )
    counts = {}
    for split, raw_dir in (("train", config.raw_train_dir), ("test", config.raw_test_dir)):
        if raw_dir is None:
            continue
        out_dir = config.work_dir / "preprocessed" / split
        out_dir.mkdir(parents=True, exist_ok=True)
        n_ok = 0
        for path in _segment_files(raw_dir):
            try:
                segment = dataio.read_segment(path)
                if segment.fs != config.fs:
                    raise DataError(
                        f"{path}: sampling rate {segment.fs} Hz does not match "
                        f"profile rate {config.fs} Hz"
                    )
                segment = apply_filter_zero_phase(broadband, segment)
                segment = notch_filter(segment, config.notch_hz)
                segment = minmax_normalize(segment, constant_channel=config.constant_channel)
                dataio.write_segment(out_dir / path.name, segment)
                n_ok += 1
            except Exception as exc:
                if not config.continue_on_error:
                    raise
                logger.error("skipping %s: %s", path, exc)
        counts[split] = n_ok
    if not counts:
        raise ConfigError("config sets neither raw_train_dir nor raw_test_dir")
    return counts


def _load_split_segments(config: PipelineConfig, split: str):
    in_dir = config.work_dir / "preprocessed" / split
    segments = []
    expected_samples = int(round(config.trial_seconds * config.fs))
    for path in _segment_files(in_dir):
        segment = dataio.read_segment(path)
        if segment.fs != config.fs:
            raise DataError(
                f"{path}: sampling rate {segment.fs} Hz, profile expects {config.fs} Hz"
            )
        if segment.n_channels != config.n_channels:
            raise DataError(
                f"{path}: {segment.n_channels} channels, profile expects {config.n_channels}"
            )
        if segment.n_samples != expected_samples:
            raise DataError(
                f"{path}: {segment.n_samples} samples, profile expects {expected_samples}"
            )
        segments.append(segment)
    return segments


def _band_scms(segments, bank, ridge: bool = False) -> np.ndarray:
    """Per-segment, per-band spatial covariance matrices: (P, H, N, N)."""
    out = np.empty((len(segments), bank.n_bands, segments[0].n_channels, segments[0].n_channels))
    for p, segment in enumerate(segments):
        for b, band_seg in enumerate(filter_bank_decompose(segment, bank)):
            c = scm(band_seg.samples)
            out[p, b] = ridge_regularize(c) if ridge else c
    return out


def fit_spatial_reducers(train_scms: np.ndarray, rank: int):
    """Per-band PCA filters and Riemannian-mean references from training SCMs."""
    n_bands = train_scms.shape[1]
    filters, references = [], []
    for b in range(n_bands):
        w = pca_spatial_filter(train_scms[:, b], rank)
        reduced = np.stack([reduce_covariance(w, c) for c in train_scms[:, b]])
        filters.append(w)
        references.append(riemannian_mean(reduced))
    return filters, references


def spatial_features_for(
    scms: np.ndarray,
    filters,
    references,
    *,
    policy: str = "train-mean",
    batch_size: int = 32,
) -> np.ndarray:
    """Concatenated per-band tangent vectors for each trial.

    ``train-mean`` projects at the fitted references; ``batch-mean``
    re-estimates each reference from the trials of every consecutive
    batch, mirroring test-time batch statistics.
    """
    n_trials, n_bands = scms.shape[:2]
    reduced = np.stack(
        [
            np.stack([reduce_covariance(filters[b], scms[p, b]) for b in range(n_bands)])
            for p in range(n_trials)
        ]
    )  # (P, H, R, R)
    rows = []
    if policy == "train-mean":
        for p in range(n_trials):
            rows.append(
                np.concatenate(
                    [tangent_vectorize(references[b], reduced[p, b]) for b in range(n_bands)]
                )
            )
    elif policy == "batch-mean":
        for start in range(0, n_trials, batch_size):
            chunk = reduced[start:start + batch_size]
            refs = [riemannian_mean(chunk[:, b]) for b in range(n_bands)]
            for p in range(chunk.shape[0]):
                rows.append(
                    np.concatenate(
                        [tangent_vectorize(refs[b], chunk[p, b]) for b in range(n_bands)]
                    )
                )
    else:
        raise ConfigError(f"unknown reference policy {policy!r}")
    return np.stack(rows)


def run_features(config: PipelineConfig) -> dict:
    """Temporal feature sequences and spatial tangent features for both splits."""
    bank = design_filter_bank(config.bands, config.fs)
    plan = plan_stft(config.trial_seconds, config.fs)
    out_dir = config.work_dir / "features"
    out_dir.mkdir(parents=True, exist_ok=True)

    splits = {}
    for split in ("train", "test"):
        segments = _load_split_segments(config, split)
        temporal = []
        labels = []
        for segment in segments:
            band_segments = filter_bank_decompose(segment, bank)
            features = build_feature_sequence(band_segments, bank.bands, plan)
            if features.values.shape != (plan.n_windows, config.temporal_feature_dim):
                raise DataError(
                    f"temporal features have shape {features.values.shape}, profile "
                    f"expects ({plan.n_windows}, {config.temporal_feature_dim})"
                )
            temporal.append(features.values)
            labels.append(np.nan if segment.label is None else float(segment.label))
        splits[split] = {
            "segments": segments,
            "temporal": np.stack(temporal),
            "labels": np.asarray(labels),
            "scms": _band_scms(segments, bank, ridge=config.scm_ridge),
        }

    filters, references = fit_spatial_reducers(splits["train"]["scms"], config.rank)
    expected_dim = config.spatial_feature_dim()
    info = {}
    for split, bundle in splits.items():
        policy = "train-mean" if split == "train" else config.reference_policy
        spatial = spatial_features_for(
            bundle["scms"], filters, references,
            policy=policy, batch_size=config.batch_size,
        )
        if spatial.shape[1] != expected_dim:
            raise DataError(
                f"spatial features have length {spatial.shape[1]}, profile expects {expected_dim}"
            )
        dataio.write_tensors(
            out_dir / f"{split}.spdt",
            {
                "temporal": bundle["temporal"],
                "spatial": spatial,
                "labels": bundle["labels"],
                "scms": bundle["scms"],
            },
        )
        info[split] = {
            "n_segments": bundle["temporal"].shape[0],
            "temporal_dim": bundle["temporal"].shape[2],
            "spatial_dim": spatial.shape[1],
        }
    spatial_model = {}
    for b, (w, ref) in enumerate(zip(filters, references)):
        spatial_model[f"filter_{b}"] = w
        spatial_model[f"reference_{b}"] = ref
    dataio.write_tensors(out_dir / "spatial_model.spdt", spatial_model)
    return info


def _architecture(config: PipelineConfig, temporal_dim: int, spatial_dim: int,
                  label: str | None = None) -> ArchitectureConfig:
    if label is None:
        variant, fusion_mode = config.variant, config.fusion_mode
    else:
        # "fused" always means the full (1 + weight) rule; alternative rules
        # carry their own label so ablation can hold trained copies of each.
        variant, mode = _VARIANT_SPECS[label]
        fusion_mode = mode or "weighted"
    return ArchitectureConfig(
        temporal_input_dim=temporal_dim,
        spatial_input_dim=spatial_dim,
        n_outputs=config.n_outputs,
        lstm_layers=config.lstm_layers,
        lstm_hidden=config.lstm_hidden,
        temporal_regularizer=config.temporal_regularizer,
        temporal_dropout=tuple([0.2] + [0.1] * (config.lstm_layers - 1)),
        temporal_embedding_dim=config.temporal_embedding_dim,
        spatial_hidden=config.spatial_hidden,
        spatial_embedding_dim=config.spatial_embedding_dim,
        encoder_hidden=config.encoder_hidden,
        fusion_hidden=config.fusion_hidden,
        fusion_mode=fusion_mode,
        attention_mode=config.attention_mode,
        output_activation=config.output_activation,
        loss=config.loss,
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        variant=variant,
    )


def _load_features(config: PipelineConfig, split: str) -> dict:
    path = config.work_dir / "features" / f"{split}.spdt"
    if not path.is_file():
        raise DataError(f"feature file {path} does not exist; run the features step first")
    return dataio.read_tensors(path)


def _checkpoint_path(config: PipelineConfig, label: str) -> Path:
    return config.work_dir / "model" / f"model_{label}.ckpt"


def run_train(config: PipelineConfig, jobs: int = 1) -> dict:
    """Train the configured variant, or sweep the retained rank in grid mode."""
    train = _load_features(config, "train")
    labels = train["labels"]
    if np.any(np.isnan(labels)):
        raise DataError("training segments are missing labels")
    if config.rank_mode == "grid":
        return _run_rank_grid(config, train, jobs=jobs)

    label = _variant_label(config)
    arch = _architecture(config, train["temporal"].shape[2], train["spatial"].shape[1])
    model = TwoStreamModel(arch, seed=config.seed)
    model_dir = config.work_dir / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    history = train_model(
        model, train["temporal"], train["spatial"], labels,
        seed=config.seed,
        log_path=model_dir / f"train_log_{label}.jsonl",
    )
    tensors = dict(model.params())
    tensors["meta.variant"] = np.array(_VARIANT_CODES[label])
    tensors["meta.n_outputs"] = np.array(float(arch.n_outputs))
    save_checkpoint(_checkpoint_path(config, label), tensors)
    return {"variant": label, "epochs": len(history), "final_loss": history[-1]["loss"]}


def _grid_point(payload) -> dict:
    """Train and score one rank candidate; module-level so executors can pickle it."""
    (config, rank, fit_idx, val_idx, temporal, scms, labels) = payload
    filters, references = fit_spatial_reducers(scms[fit_idx], rank)
    spatial_fit = spatial_features_for(scms[fit_idx], filters, references, policy="train-mean")
    spatial_val = spatial_features_for(scms[val_idx], filters, references, policy="train-mean")
    arch = _architecture(config, temporal.shape[2], spatial_fit.shape[1])
    model = TwoStreamModel(arch, seed=config.seed)
    train_model(model, temporal[fit_idx], spatial_fit, labels[fit_idx], seed=config.seed)
    metrics = evaluate_model(model, temporal[val_idx], spatial_val, labels[val_idx])
    row = {"rank": rank}
    for key in ("accuracy", "kappa", "rmse", "pcc"):
        if key in metrics:
            row[key] = metrics[key]
    return row


def _run_rank_grid(config: PipelineConfig, train: dict, jobs: int = 1) -> dict:
    """Sweep R over [1, N-1] on a 90/10 split of the training data."""
    labels = train["labels"]
    n = len(labels)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_val = max(1, n // 10)
    val_idx, fit_idx = order[:n_val], order[n_val:]
    ranks = list(range(1, config.n_channels))
    if not ranks:
        raise ConfigError("grid mode needs at least two channels")
    payloads = [
        (config, rank, fit_idx, val_idx, train["temporal"], train["scms"], labels)
        for rank in ranks
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_grid_point, payloads))
    else:
        rows = [_grid_point(p) for p in payloads]
    rows.sort(key=lambda r: r["rank"])
    score_key = "accuracy" if config.task == "classification" else "pcc"
    best = max(rows, key=lambda r: r[score_key])
    result = {"rows": rows, "best_rank": best["rank"]}
    out_path = config.work_dir / "grid_metrics.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return result


def _evaluate_variant(config: PipelineConfig, label: str, test: dict) -> dict:
    path = _checkpoint_path(config, label)
    if not path.is_file():
        raise DataError(f"missing checkpoint for variant {label!r}: {path}")
    tensors = load_checkpoint(path)
    stored = tensors.pop("meta.variant", None)
    tensors.pop("meta.n_outputs", None)
    if stored is not None and float(stored) != _VARIANT_CODES[label]:
        raise ConfigError(
            f"checkpoint {path} was trained for a different variant "
            f"(code {float(stored):.0f})"
        )
    arch = _architecture(
        config, test["temporal"].shape[2], test["spatial"].shape[1], label=label
    )
    model = TwoStreamModel(arch, seed=config.seed)
    try:
        model.load_params(tensors)
    except ValueError as exc:
        raise ConfigError(f"checkpoint {path} does not match this profile: {exc}") from exc
    labels = test["labels"]
    if np.any(np.isnan(labels)):
        raise DataError("test segments are missing labels")
    return evaluate_model(model, test["temporal"], test["spatial"], labels)


def run_evaluate(config: PipelineConfig) -> dict:
    """Score the trained model on the test split and write metrics JSON."""
    test = _load_features(config, "test")
    label = _variant_label(config)
    metrics = _evaluate_variant(config, label, test)
    metrics = {
        "profile": config.profile,
        "variant": label,
        "task": config.task,
        "n_test": int(test["labels"].shape[0]),
        **metrics,
    }
    out_path = config.work_dir / "metrics.json"
    out_path.write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return metrics


def run_ablate(config: PipelineConfig) -> list[dict]:
    """Evaluate every configured variant and tabulate one row per variant per metric."""
    if not config.ablate_variants:
        raise ConfigError("ablate needs a non-empty ablate_variants list")
    for label in config.ablate_variants:
        if label not in _VARIANT_SPECS:
            raise ConfigError(
                f"unknown ablate variant {label!r}; choose from {sorted(_VARIANT_SPECS)}"
            )
    test = _load_features(config, "test")
    rows = []
    for label in config.ablate_variants:
        metrics = _evaluate_variant(config, label, test)
        for key in ("accuracy", "kappa", "rmse", "pcc"):
            if key in metrics:
                rows.append({"variant": label, "metric": key, "value": metrics[key]})
    out_path = config.work_dir / "ablation.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "metric", "value"])
        writer.writeheader()
        writer.writerows(rows)
    return rows
