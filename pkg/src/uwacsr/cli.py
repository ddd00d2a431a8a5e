"""Command-line front end binding config files to the pipeline stages.

Three subcommands cover the workflow: ``dataset`` generates and saves a
frame set, ``train`` fits a network on one (individual-SNR, pretrain, or
transfer mode), and ``eval`` sweeps experiment configs over the test split
into a results CSV.

Configs are flat ``key = value`` text; ``#`` starts a comment.  Exit codes:
0 success, 2 config parse (unknown or malformed keys, bad usage), 3 config
semantics (a value that parses but is invalid here), 4 I/O failure, 5
missing artifact (dataset, checkpoint, or model mapping).

Every run writes ``<out>.run``: the resolved-config hash (computed before
any work starts), the seed, and per-stage wall-clock timings.  Only the
timing lines vary between identical runs; the artifacts themselves are
byte-reproducible given the same config and seed with ``threads = 1``.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import build_mlp, load_mlp, mlp_fit, save_mlp
from .channel_model import EnvironmentConfig
from .experiments import (
    _ENV_INT_FIELDS,
    Dataset,
    DatasetSpec,
    ExperimentConfig,
    METHODS,
    generate_dataset,
    load_dataset,
    run_suite,
    save_dataset,
    training_arrays,
    training_rows,
)
from .neuralnet import (
    LossReport,
    TrainingConfig,
    build_csrnet,
    fit,
    load_network,
    save_network,
    transfer_train,
)
from .ofdm import OfdmConfig

EXIT_OK = 0
EXIT_CONFIG_PARSE = 2
EXIT_CONFIG_SEMANTIC = 3
EXIT_IO = 4
EXIT_MISSING_ARTIFACT = 5

_PRETRAIN_DEFAULT_SNR_DB = 15.0

# applied thread limits must outlive the call, so the controller is kept
_THREAD_LIMITER = None


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code
        self.message = message


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines into a dict; duplicates and syntax are hard errors."""
    out: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise CliError(EXIT_CONFIG_PARSE, f"config line {number}: expected 'key = value'")
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise CliError(EXIT_CONFIG_PARSE, f"config line {number}: empty key or value")
        if key in out:
            raise CliError(EXIT_CONFIG_PARSE, f"config line {number}: duplicate key {key!r}")
        out[key] = value
    return out


def _read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _convert(key: str, raw: str, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "ints":
            return tuple(int(tok) for tok in raw.split())
        if kind == "floats":
            return tuple(float(tok) for tok in raw.split())
    except ValueError:
        raise CliError(
            EXIT_CONFIG_SEMANTIC, f"key {key!r}: cannot interpret {raw!r} as {kind if isinstance(kind, str) else kind.__name__}"
        ) from None
    return raw


def _take(cfg: dict[str, str], schema: dict) -> dict:
    for key in cfg:
        if key not in schema:
            raise CliError(EXIT_CONFIG_PARSE, f"unknown config key {key!r}")
    return {key: _convert(key, raw, schema[key]) for key, raw in cfg.items()}


def _apply_threads(n: int) -> None:
    global _THREAD_LIMITER
    if n < 0:
        raise CliError(EXIT_CONFIG_SEMANTIC, "threads must be 0 (auto) or positive")
    if n == 0:
        return
    import threadpoolctl

    _THREAD_LIMITER = threadpoolctl.threadpool_limits(limits=n)


@dataclass
class RunManifest:
    """Audit record written next to every output as ``<out>.run``."""

    command: str
    config_path: str
    config_sha256: str
    seed: int
    out_dir: str
    extra: list[str] = field(default_factory=list)
    timings: list[tuple[str, float]] = field(default_factory=list)

    def write(self, out_path) -> None:
        lines = [
            f"command: {self.command}",
            f"config: {self.config_path}",
            f"config_sha256: {self.config_sha256}",
            f"seed: {self.seed}",
            f"out_dir: {self.out_dir}",
            *self.extra,
            *(f"stage {name}: {seconds:.3f} s" for name, seconds in self.timings),
        ]
        try:
            Path(str(out_path) + ".run").write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write run manifest: {exc}") from exc


def _resolved_hash(*parts) -> str:
    blob = "\n".join(str(p) for p in parts)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _manifest_for(command, config_path, resolved_parts, seed, out_path) -> RunManifest:
    out_dir = str(Path(out_path).resolve().parent)
    return RunManifest(command, str(config_path), _resolved_hash(*resolved_parts), seed, out_dir)


_ENV_SCHEMA = {
    f.name: (int if f.name in _ENV_INT_FIELDS else float)
    for f in dataclasses.fields(EnvironmentConfig)
}
_OFDM_SCHEMA = {
    "n_subcarriers": int,
    "n_symbols_per_frame": int,
    "carrier": float,
    "bandwidth": float,
}
_DATASET_SCHEMA = {
    "n_frames": int,
    "train_fraction": float,
    "val_fraction": float,
    "test_fraction": float,
    "snr_grid": "floats",
    "seed": int,
    "pilot_counts": "ints",
    "threads": int,
    **_OFDM_SCHEMA,
    **_ENV_SCHEMA,
}


def _dataset_spec_from(cfg: dict[str, str], seed_override: int | None) -> tuple[DatasetSpec, int]:
    values = _take(cfg, _DATASET_SCHEMA)
    threads = values.pop("threads", 1)
    if seed_override is not None:
        values["seed"] = seed_override
    env_kwargs = {k: values.pop(k) for k in list(values) if k in _ENV_SCHEMA}
    ofdm_kwargs = {k: values.pop(k) for k in list(values) if k in _OFDM_SCHEMA}
    try:
        spec = DatasetSpec(
            env=EnvironmentConfig(**env_kwargs), ofdm=OfdmConfig(**ofdm_kwargs), **values
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG_SEMANTIC, str(exc)) from exc
    return spec, threads


def cmd_dataset(config_path, out_path, seed_override: int | None) -> int:
    spec, threads = _dataset_spec_from(_read_config(config_path), seed_override)
    _apply_threads(threads)
    manifest = _manifest_for("dataset", config_path, (spec,), spec.seed, out_path)
    manifest.write(out_path)

    start = time.perf_counter()
    dataset = generate_dataset(spec)
    manifest.timings.append(("generate", time.perf_counter() - start))

    start = time.perf_counter()
    try:
        save_dataset(dataset, out_path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset {out_path}: {exc}") from exc
    manifest.timings.append(("save", time.perf_counter() - start))
    manifest.write(out_path)
    return EXIT_OK


def _load_dataset_artifact(path) -> Dataset:
    if not Path(path).exists():
        raise CliError(EXIT_MISSING_ARTIFACT, f"dataset not found: {path}")
    try:
        return load_dataset(path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot load dataset {path}: {exc}") from exc


_TRAIN_COMMON_KEYS = {
    "model",
    "lrelu_slope",
    "scaling_factor",
    "n_pilot_symbols",
    "snr_db",
    "initial_lr",
    "lr_decay",
    "decay_every",
    "max_epochs",
    "early_stop_patience",
    "batch_size",
    "optimizer",
    "momentum",
    "clip_norm",
    "seed",
    "threads",
}
_TRAIN_SCHEMA = {
    "model": str,
    "depth": int,
    "n_filters": int,
    "hidden_sizes": "ints",
    "lrelu_slope": float,
    "scaling_factor": float,
    "n_pilot_symbols": int,
    "snr_db": float,
    "initial_lr": float,
    "lr_decay": float,
    "decay_every": int,
    "max_epochs": int,
    "early_stop_patience": int,
    "batch_size": int,
    "optimizer": str,
    "momentum": float,
    "clip_norm": float,
    "seed": int,
    "threads": int,
}


def _training_config_from(values: dict, seed: int) -> TrainingConfig:
    kwargs = {
        key: values[key]
        for key in (
            "initial_lr",
            "lr_decay",
            "decay_every",
            "max_epochs",
            "early_stop_patience",
            "batch_size",
            "optimizer",
            "momentum",
            "clip_norm",
        )
        if key in values
    }
    try:
        return TrainingConfig(seed=seed, **kwargs)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG_SEMANTIC, str(exc)) from exc


def _write_loss_csv(report: LossReport, path) -> None:
    lines = ["epoch,train_loss,val_loss,lr"]
    for epoch, (tr, va, lr) in enumerate(zip(report.train_loss, report.val_loss, report.lr)):
        lines.append(f"{epoch},{tr!r},{va!r},{lr!r}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write loss report: {exc}") from exc


def cmd_train(dataset_path, config_path, out_path, mode, pretrained, seed_override) -> int:
    dataset = _load_dataset_artifact(dataset_path)
    values = _take(_read_config(config_path), _TRAIN_SCHEMA)
    _apply_threads(values.pop("threads", 1))

    model_kind = values.pop("model", "csrnet")
    if model_kind not in ("csrnet", "mlp"):
        raise CliError(EXIT_CONFIG_SEMANTIC, f"model must be 'csrnet' or 'mlp', got {model_kind!r}")
    inapplicable = (set(values) - _TRAIN_COMMON_KEYS) - (
        {"depth", "n_filters"} if model_kind == "csrnet" else {"hidden_sizes"}
    )
    if inapplicable:
        raise CliError(
            EXIT_CONFIG_SEMANTIC,
            f"keys not applicable to model {model_kind!r}: {', '.join(sorted(inapplicable))}",
        )

    seed = seed_override if seed_override is not None else values.pop("seed", 0)
    values.pop("seed", None)
    pilots = values.pop("n_pilot_symbols", 4)
    scaling = values.pop("scaling_factor", 10.0)
    slope = values.pop("lrelu_slope", 0.3)
    snr_db = values.pop("snr_db", None)

    if mode == "individual":
        if snr_db is None:
            raise CliError(EXIT_CONFIG_SEMANTIC, "individual mode requires a snr_db key")
    elif mode == "pretrain":
        snr_db = _PRETRAIN_DEFAULT_SNR_DB if snr_db is None else snr_db
    elif mode == "transfer":
        if snr_db is not None:
            raise CliError(EXIT_CONFIG_SEMANTIC, "transfer mode trains on the mixed split; drop snr_db")
        if pretrained is None:
            raise CliError(EXIT_CONFIG_SEMANTIC, "transfer mode requires --pretrained")
        if model_kind != "csrnet":
            raise CliError(EXIT_CONFIG_SEMANTIC, "transfer mode applies to the conv net only")
    if snr_db is not None:
        try:
            dataset.spec.snr_index(snr_db)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG_SEMANTIC, str(exc)) from exc

    depth = values.pop("depth", 20)
    n_filters = values.pop("n_filters", 64)
    hidden = values.pop("hidden_sizes", (64, 128, 64))
    train_cfg = _training_config_from(values, seed)

    resolved = (model_kind, mode, snr_db, pilots, scaling, slope, depth, n_filters, hidden, train_cfg, pretrained)
    manifest = _manifest_for("train", config_path, resolved, seed, out_path)
    manifest.extra.append(f"mode: {mode}")
    manifest.extra.append(f"model: {model_kind}")
    manifest.write(out_path)

    try:
        if model_kind == "mlp":
            train = training_rows(dataset, pilots, "train", snr_db, scaling)
            val = training_rows(dataset, pilots, "val", snr_db, scaling)
        else:
            train = training_arrays(dataset, pilots, "train", snr_db, scaling)
            val = training_arrays(dataset, pilots, "val", snr_db, scaling)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG_SEMANTIC, str(exc)) from exc

    start = time.perf_counter()
    if mode == "transfer":
        if not Path(pretrained).exists():
            raise CliError(EXIT_MISSING_ARTIFACT, f"pretrained checkpoint not found: {pretrained}")
        try:
            base = load_network(pretrained)
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_IO, f"cannot load pretrained checkpoint: {exc}") from exc
        net, report = transfer_train(base, train, val, train_cfg)
        manifest.extra.append(f"frozen_layers: {net.depth // 2}")
    elif model_kind == "mlp":
        net = build_mlp(
            pilots,
            dataset.spec.ofdm.n_symbols_per_frame,
            hidden_sizes=hidden,
            lrelu_slope=slope,
            seed=seed,
            scaling_factor=scaling,
        )
        report = mlp_fit(net, train, val, train_cfg)
    else:
        net = build_csrnet(
            depth=depth,
            n_filters=n_filters,
            lrelu_slope=slope,
            seed=seed,
            scaling_factor=scaling,
        )
        report = fit(net, train, val, train_cfg)
    manifest.timings.append(("train", time.perf_counter() - start))

    start = time.perf_counter()
    try:
        if model_kind == "mlp":
            save_mlp(net, out_path)
        else:
            save_network(net, out_path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write checkpoint {out_path}: {exc}") from exc
    _write_loss_csv(report, str(out_path) + ".losses.csv")
    manifest.timings.append(("save", time.perf_counter() - start))

    manifest.extra.append(f"stop_epoch: {report.stop_epoch}")
    manifest.extra.append(f"stop_reason: {report.stop_reason}")
    manifest.extra.append(f"best_val_epoch: {report.best_val_epoch}")
    manifest.extra.append(f"best_val_loss: {report.best_val_loss!r}")
    manifest.write(out_path)
    return EXIT_OK


_EVAL_SCHEMA = {
    "methods": str,
    "snr_grid": "floats",
    "scaling_factor": float,
    "n_bootstrap": int,
    "seed": int,
    "threads": int,
}


def _parse_method_token(token: str) -> tuple[str, int]:
    name, dash, tail = token.partition("-")
    if name not in METHODS:
        raise CliError(EXIT_CONFIG_SEMANTIC, f"unknown method {name!r} in token {token!r}")
    if not dash:
        if name == "FullCsi":
            return name, 4
        raise CliError(EXIT_CONFIG_SEMANTIC, f"token {token!r} needs a pilot count, e.g. {name}-4")
    try:
        return name, int(tail)
    except ValueError:
        raise CliError(EXIT_CONFIG_SEMANTIC, f"bad pilot count in token {token!r}") from None


def _parse_model_args(model_args) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in model_args:
        token, sep, path = item.partition("=")
        if not sep or not token or not path:
            raise CliError(EXIT_CONFIG_PARSE, f"--model expects NAME=PATH, got {item!r}")
        if token in out:
            raise CliError(EXIT_CONFIG_PARSE, f"duplicate --model entry for {token!r}")
        out[token] = path
    return out


def _load_model(method: str, path: str):
    if not Path(path).exists():
        raise CliError(EXIT_MISSING_ARTIFACT, f"model checkpoint not found: {path}")
    try:
        return load_network(path) if method == "CSRNet" else load_mlp(path)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot load model {path}: {exc}") from exc


def cmd_eval(dataset_path, config_path, out_path, model_args, seed_override) -> int:
    dataset = _load_dataset_artifact(dataset_path)
    values = _take(_read_config(config_path), _EVAL_SCHEMA)
    _apply_threads(values.pop("threads", 1))
    if "methods" not in values:
        raise CliError(EXIT_CONFIG_SEMANTIC, "a methods key is required, e.g. methods = LS-4 CSRNet-4")

    tokens = values["methods"].split()
    parsed = [_parse_method_token(tok) for tok in tokens]
    model_paths = _parse_model_args(model_args)
    requested = set(tokens)
    for extra in set(model_paths) - requested:
        raise CliError(EXIT_CONFIG_SEMANTIC, f"--model given for unrequested config {extra!r}")

    seed = seed_override if seed_override is not None else values.get("seed", 0)
    scaling = values.get("scaling_factor", 10.0)
    configs = []
    for token, (method, pilots) in zip(tokens, parsed):
        model = None
        if method in ("CSRNet", "DNN"):
            if token not in model_paths:
                raise CliError(EXIT_MISSING_ARTIFACT, f"no --model given for {token}")
            model = _load_model(method, model_paths[token])
            if method == "DNN" and model.n_inputs != 2 * pilots:
                raise CliError(
                    EXIT_CONFIG_SEMANTIC,
                    f"model for {token} expects {model.n_inputs // 2} pilot symbols",
                )
        try:
            configs.append(ExperimentConfig(method, pilots, scaling, model))
        except ValueError as exc:
            raise CliError(EXIT_CONFIG_SEMANTIC, str(exc)) from exc

    grid = values.get("snr_grid")
    n_bootstrap = values.get("n_bootstrap", 1000)
    resolved = (
        sorted(tokens),
        sorted(model_paths.items()),
        grid if grid is not None else dataset.spec.snr_grid,
        scaling,
        n_bootstrap,
    )
    manifest = _manifest_for("eval", config_path, resolved, seed, out_path)
    manifest.write(out_path)

    start = time.perf_counter()
    try:
        table = run_suite(dataset, configs, snr_grid=grid, n_bootstrap=n_bootstrap, seed=seed)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG_SEMANTIC, str(exc)) from exc
    manifest.timings.append(("evaluate", time.perf_counter() - start))

    try:
        table.write_csv(out_path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write results {out_path}: {exc}") from exc
    manifest.write(out_path)
    return EXIT_OK


def entry(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uwacsr",
        description="Underwater-acoustic OFDM channel estimation workbench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="generate and save a frame dataset")
    p_dataset.add_argument("--config", required=True, help="flat key = value config file")
    p_dataset.add_argument("--out", required=True, help="output dataset path")
    p_dataset.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_train = sub.add_parser("train", help="fit a network on a saved dataset")
    p_train.add_argument("dataset", help="dataset file from the dataset subcommand")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="output checkpoint path")
    p_train.add_argument("--mode", required=True, choices=("individual", "pretrain", "transfer"))
    p_train.add_argument("--pretrained", default=None, help="checkpoint to adapt in transfer mode")
    p_train.add_argument("--seed", type=int, default=None)

    p_eval = sub.add_parser("eval", help="sweep methods over the test split into a CSV")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--out", required=True, help="output results CSV path")
    p_eval.add_argument(
        "--model",
        action="append",
        default=[],
        metavar="NAME=PATH",
        help="checkpoint for a learned config, e.g. CSRNet-4=net.csrn (repeatable)",
    )
    p_eval.add_argument("--seed", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "dataset":
            return cmd_dataset(args.config, args.out, args.seed)
        if args.command == "train":
            return cmd_train(
                args.dataset, args.config, args.out, args.mode, args.pretrained, args.seed
            )
        return cmd_eval(args.dataset, args.config, args.out, args.model, args.seed)
    except CliError as err:
        print(f"uwacsr: {err.message}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(entry())
