"""Command-line front end: gen-data, train, analyze, interpolate.

Every command funnels its randomness through one seed, echoes its effective
configuration into the output directory, and maps failures to stable exit
codes: 1 usage/config, 2 data format, 3 numeric/training.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import riemann as rm
from .errors import (ConfigError, ContractViolation, DegenerateMetricError,
                     DomainError, FormatError, GraphConnectivityError,
                     TrainingFault, UnsupportedDimensionError, UsageError)
from .nets import build_model
from .trainer import TrainConfig, fit, load_checkpoint, save_checkpoint
from .vhp import sample_prior

# Table-style presets: architecture widths and constrained-training knobs
PRESETS = {
    "pendulum": {
        "dataset": {"type": "pendulum", "count": 15_000, "noise_std": 0.05},
        "model": {"latent_dim": 2, "likelihood": "gaussian",
                  "encoder_hidden": [256, 256], "decoder_hidden": [256, 256],
                  "prior_encoder_hidden": [256, 256], "prior_decoder_hidden": [256, 256]},
        "train": {"kappa": 0.025, "nu": 1.0, "k_importance": 16, "eta": 1000.0,
                  "learning_rate": 1e-4},
    },
    "mnist": {
        "dataset": {"type": "mnist", "binarise_threshold": 0.5},
        "model": {"latent_dim": 2, "likelihood": "bernoulli",
                  "encoder_hidden": [256, 256, 256, 256],
                  "decoder_hidden": [256, 256, 256, 256],
                  "prior_encoder_hidden": [256, 256, 256, 256],
                  "prior_decoder_hidden": [256, 256, 256, 256]},
        "train": {"kappa": 0.245, "nu": 1.0, "k_importance": 16, "eta": 8000.0,
                  "learning_rate": 1e-4},
    },
    "human": {
        "dataset": {"type": "file"},
        "model": {"latent_dim": 2, "likelihood": "gaussian",
                  "encoder_hidden": [256, 256, 256, 256],
                  "decoder_hidden": [256, 256, 256, 256],
                  "prior_encoder_hidden": [256, 256, 256, 256],
                  "prior_decoder_hidden": [256, 256, 256, 256]},
        "train": {"kappa": 0.03, "nu": 1.0, "k_importance": 32, "eta": 8000.0,
                  "learning_rate": 1e-4},
    },
}

DATASET_DEFAULTS = {"type": "pendulum", "path": None, "label_path": None,
                    "count": 15_000, "noise_std": 0.05, "binarise_threshold": 0.5}
MODEL_DEFAULTS = {"latent_dim": 2, "likelihood": "gaussian",
                  "encoder_hidden": [256, 256], "decoder_hidden": [256, 256],
                  "prior_encoder_hidden": [256, 256], "prior_decoder_hidden": [256, 256]}


def default_run_config() -> dict:
    return {
        "dataset": dict(DATASET_DEFAULTS),
        "model": {k: (list(v) if isinstance(v, list) else v) for k, v in MODEL_DEFAULTS.items()},
        "train": {k: v for k, v in vars(TrainConfig()).items() if k != "seed"},
        "seed": 0,
    }


def _merge_strict(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge_strict(base[key], value, path + key + ".")
        else:
            base[key] = value


def build_run_config(preset: str | None, config_path, overrides: dict) -> dict:
    cfg = default_run_config()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        _merge_strict(cfg, PRESETS[preset])
    if config_path is not None:
        try:
            user = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {config_path} is not valid JSON: {err}")
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge_strict(cfg, user)
    _merge_strict(cfg, overrides)
    return cfg


def train_config_from(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(seed=cfg["seed"], **cfg["train"]).validate()
    except (TypeError, ContractViolation) as err:
        raise ConfigError(f"bad train config: {err}")


def resolve_dataset(cfg: dict) -> dt.Dataset:
    ds_cfg = cfg["dataset"]
    kind = ds_cfg["type"]
    if kind == "pendulum":
        if ds_cfg["count"] < 1:
            raise ConfigError("dataset.count must be >= 1")
        return dt.pendulum_dataset(dt.PendulumSpec(
            count=ds_cfg["count"], noise_std=ds_cfg["noise_std"], seed=cfg["seed"]))
    if kind == "mnist":
        if not ds_cfg["path"]:
            raise ConfigError("dataset.path (IDX images) required for mnist")
        return dt.mnist_load(ds_cfg["path"], ds_cfg["label_path"],
                             ds_cfg["binarise_threshold"])
    if kind == "file":
        if not ds_cfg["path"]:
            raise ConfigError("dataset.path required for file datasets")
        return dt.load_dataset(ds_cfg["path"])
    raise ConfigError(f"unknown dataset.type {kind!r}")


def _echo_config(out_dir: Path, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")


# -- commands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    spec = dt.PendulumSpec(count=args.count, noise_std=args.noise_std, seed=args.seed)
    ds = dt.pendulum_dataset(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        np.savetxt(out, ds.samples, delimiter=",")
    else:
        dt.save_dataset(out, ds)
    print(f"wrote {ds.count} samples of dimension {ds.dim} to {out}")
    return 0


def cmd_train(args) -> int:
    overrides: dict = {"train": {}}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.eta is not None:
        overrides["train"]["eta"] = args.eta
    if args.steps is not None:
        overrides["train"]["max_steps"] = args.steps
    if args.batch_size is not None:
        overrides["train"]["batch_size"] = args.batch_size
    if args.no_mixup:
        overrides["train"]["mixup_enabled"] = False
    if args.fixed_c2 is not None:
        overrides["train"]["fixed_c2"] = args.fixed_c2
    if args.dataset is not None:
        overrides["dataset"] = {"type": "file", "path": args.dataset}
        if str(args.dataset).endswith("ubyte"):
            overrides["dataset"]["type"] = "mnist"
            if args.labels is not None:
                overrides["dataset"]["label_path"] = args.labels
    cfg = build_run_config(args.preset, args.config, overrides)
    train_cfg = train_config_from(cfg)

    dataset = resolve_dataset(cfg)
    if dataset.count < 1:
        raise FormatError("dataset is empty")
    out_dir = Path(args.out)
    _echo_config(out_dir, cfg)
    model = build_model(dataset.dim, cfg["model"]["latent_dim"],
                        cfg["model"]["encoder_hidden"], cfg["model"]["decoder_hidden"],
                        cfg["model"]["prior_encoder_hidden"],
                        cfg["model"]["prior_decoder_hidden"],
                        cfg["model"]["likelihood"], seed=cfg["seed"])
    result = fit(model, dataset, train_cfg, log_path=out_dir / "log.csv")
    save_checkpoint(out_dir / "checkpoint.fmc", model, result.state, train_cfg)
    last = result.log[-1] if result.log else {}
    print(f"trained {train_cfg.max_steps} steps -> {out_dir / 'checkpoint.fmc'}")
    if last:
        print(f"final: beta={last['beta']:.4g} c_hat={last['c_hat']:.4g} "
              f"total={last['total']:.4g}")
    return 0


def cmd_analyze(args) -> int:
    model, _, train_cfg = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)

    prior = sample_prior(model, args.samples, seed=int(rng.integers(2 ** 31)))
    report = rm.metric_report(model.decode, prior.z, h=args.jacobian_step)

    if args.dataset is not None:
        encodings = model.encode_mean(dt.load_dataset(args.dataset).samples)
    else:
        encodings = prior.z
    box = rm.bounding_box(encodings, margin=0.1)

    if args.pairs > 0:
        graph = rm.build_geodesic_graph(model.decode, box, args.graph_nodes,
                                        args.graph_neighbours,
                                        seed=int(rng.integers(2 ** 31)))
        idx = rng.integers(0, encodings.shape[0], size=(args.pairs, 2))
        idx = idx[(encodings[idx[:, 0]] != encodings[idx[:, 1]]).any(axis=1)]
        pairs = [(encodings[i], encodings[j]) for i, j in idx]
        stats = rm.ratio_table(model.decode, graph, pairs, m=args.waypoints)
        report.ratio_observation = (stats.observation_mean, stats.observation_std)
        report.ratio_latent = (stats.latent_mean, stats.latent_std)
        s_mean, s_std = rm.smoothness(model.decode, pairs, m=args.waypoints)
        report.smoothness_mean = s_mean
        report.smoothness_std = s_std

    (out_dir / "report.json").write_text(report.to_json() + "\n")

    if args.grid_resolution > 0:
        if model.latent_dim != 2:
            raise UnsupportedDimensionError(
                f"grid fields need a planar latent space, model has {model.latent_dim}")
        centres = [encodings[0]] if args.centre is None else \
            [np.array([float(v) for v in c.split(",")]) for c in args.centre]
        fields = rm.grid_fields(model.decode, box, args.grid_resolution,
                                centres=centres, h=args.jacobian_step)
        rm.export_field_csv(out_dir / "mf_field.csv", fields.z1, fields.z2, fields.mf)
        rm.export_field_csv(out_dir / "vector_field_1.csv", fields.z1, fields.z2,
                            fields.vector_field[:, :, 0])
        rm.export_field_csv(out_dir / "vector_field_2.csv", fields.z1, fields.z2,
                            fields.vector_field[:, :, 1])
        for i, dist in enumerate(fields.distance_fields):
            rm.export_field_csv(out_dir / f"distance_field_{i}.csv",
                                fields.z1, fields.z2, dist)
    print(f"report written to {out_dir / 'report.json'}")
    return 0


def cmd_interpolate(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    if args.from_z is not None and args.to_z is not None:
        z_a = np.array([float(v) for v in args.from_z.split(",")])
        z_b = np.array([float(v) for v in args.to_z.split(",")])
    elif args.from_index is not None and args.to_index is not None:
        if args.dataset is None:
            raise UsageError("--dataset is required with --from-index/--to-index")
        ds = dt.load_dataset(args.dataset)
        for idx in (args.from_index, args.to_index):
            if not 0 <= idx < ds.count:
                raise UsageError(f"index {idx} out of range [0, {ds.count})")
        enc = model.encode_mean(ds.samples[[args.from_index, args.to_index]])
        z_a, z_b = enc[0], enc[1]
    else:
        raise UsageError("give either --from-z/--to-z or --from-index/--to-index")
    path = rm.straight_line(z_a, z_b, args.waypoints)
    decoded = model.decode(path.waypoints)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, decoded, delimiter=",")
    print(f"wrote {decoded.shape[0]} waypoints to {out}")
    return 0


# -- argument plumbing -----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> _Parser:
    parser = _Parser(prog="flatvae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a pendulum image dataset")
    g.add_argument("target", choices=["pendulum"])
    g.add_argument("--count", type=int, default=15_000)
    g.add_argument("--noise-std", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=["npz", "csv"], default="npz")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a preset/config")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--dataset", help="dataset file (.npz/.csv) or IDX images")
    t.add_argument("--labels", help="IDX label file (mnist)")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--eta", type=float, help="flatness weight; 0 trains the plain baseline")
    t.add_argument("--no-mixup", action="store_true")
    t.add_argument("--fixed-c2", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="latent-geometry report for a checkpoint")
    a.add_argument("checkpoint")
    a.add_argument("--samples", type=int, default=1000, help="prior samples for G statistics")
    a.add_argument("--pairs", type=int, default=100)
    a.add_argument("--graph-nodes", type=int, default=3600)
    a.add_argument("--graph-neighbours", type=int, default=12)
    a.add_argument("--waypoints", type=int, default=100)
    a.add_argument("--grid-resolution", type=int, default=40, help="0 disables grid fields")
    a.add_argument("--centre", action="append", help="z1,z2 centre for a distance field")
    a.add_argument("--jacobian-step", type=float, default=1e-4)
    a.add_argument("--dataset", help="dataset whose encodings give pairs and bounds")
    a.add_argument("--seed", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("interpolate", help="decode a straight latent path")
    i.add_argument("checkpoint")
    i.add_argument("--from-z")
    i.add_argument("--to-z")
    i.add_argument("--from-index", type=int)
    i.add_argument("--to-index", type=int)
    i.add_argument("--dataset")
    i.add_argument("--waypoints", "-M", type=int, default=100)
    i.add_argument("--seed", type=int)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_interpolate)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FormatError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except (ContractViolation, DomainError, TrainingFault, DegenerateMetricError,
            GraphConnectivityError, UnsupportedDimensionError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
