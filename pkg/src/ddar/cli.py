"""Command-line interface.

Subcommands: ``data gen``, ``train``, ``eval``, ``grid``, ``project``,
``compare`` and ``ablate``. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.

Run configuration is resolved as defaults < ``--config`` file < flags. The
config file is flat ``key=value`` text (``#`` starts a comment); every
resolved key is written back to ``manifest.txt`` next to the outputs, and
``ddar train --config manifest.txt`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import baselines
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    atomic_write_text,
    gen_blobs,
    gen_ood_ring,
    gen_two_moons,
    load_csv,
    save_csv,
)
from .exceptions import CheckpointError, ContractError, DataError, NumericError
from .experiments import LAMBDA_GRID, METHODS, Scenario, ablate, compare, fit_method, format_table, score
from .metrics import evaluate, pca2, report_to_dict, uncertainty_grid
from .model import DdarModel, ExtractorConfig, forward
from .training import TrainConfig, write_history_csv

logger = logging.getLogger("ddar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_DIR_ENV = "DDAR_OUTPUT_DIR"
DEFAULT_BOUNDS = (-2.5, 3.5, -2.0, 3.0)


class UsageError(Exception):
    pass


def _num(x) -> str:
    """Round-trip text form of a float (plain ``repr`` of a numpy scalar is not CSV-friendly)."""
    return repr(float(x))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    method: str = "ddar"
    data: str = ""
    dataset: str = "two-moons"
    n: int = 500
    noise: float = 0.1
    data_seed: int = 0
    width: int = 128
    depth: int = 12
    embed_dim: int = 128
    dropout_rate: float = 0.01
    residual_scale: float = 0.1
    learning_rate: float = 0.01
    batch_size: int = 64
    max_steps: int = 2000
    loss_weight: float = 0.1
    sigma: float = 0.3
    num_prototypes: int = 64
    centroid_dim: int = 128
    ema_gamma: float = 0.999
    seed: int = 0
    prototype_init: str = "random"
    use_dissimilar: bool = True
    use_entropy: bool = True
    members: int = 10
    out: str = ""

    def extractor_config(self, input_dim: int) -> ExtractorConfig:
        return ExtractorConfig(
            input_dim=input_dim,
            width=self.width,
            depth=self.depth,
            embed_dim=self.embed_dim,
            dropout_rate=self.dropout_rate,
            residual_scale=self.residual_scale,
        )

    def train_config(self) -> TrainConfig:
        names = set(TrainConfig.field_names())
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(self) if f.name in names})


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def manifest_text(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def resolve_run_config(args, flag_keys: Sequence[str]) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values.update(parse_config_text(fh.read(), args.config))
    for key in flag_keys:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return RunConfig(**values)


def _add_run_flags(p: argparse.ArgumentParser, skip: Sequence[str] = ()) -> list[str]:
    keys = []
    for f in fields(RunConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, type=lambda s, k=f.name: _coerce(k, s), default=None,
                           metavar="BOOL")
        else:
            kind = {"int": int, "float": float}.get(f.type, str) if isinstance(f.type, str) else f.type
            p.add_argument(flag, dest=f.name, type=kind, default=None)
        keys.append(f.name)
    return keys


def _output_dir(explicit: Optional[str]) -> str:
    out = explicit or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_training_data(cfg: RunConfig) -> Dataset:
    if cfg.data:
        if not os.path.exists(cfg.data):
            raise DataError(f"dataset file not found: {cfg.data}")
        return load_csv(cfg.data, has_labels=True)
    if cfg.dataset == "two-moons":
        return gen_two_moons(cfg.n, cfg.noise, cfg.data_seed)
    raise DataError(f"no training data: give --data CSV or --dataset two-moons (got {cfg.dataset!r})")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _parse_centers(text: str) -> np.ndarray:
    try:
        return np.array([[float(v) for v in c.split(",")] for c in text.split(";") if c.strip()])
    except ValueError:
        raise UsageError(f"cannot parse centers {text!r}; expected 'x,y;x,y'") from None


def cmd_data(args) -> int:
    if args.noise is not None and args.noise < 0:
        raise UsageError("--noise must be >= 0")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.dataset == "two-moons":
        ds = gen_two_moons(args.n, args.noise if args.noise is not None else 0.1, args.seed)
    elif args.dataset == "ring":
        ds = gen_ood_ring(args.n, args.radius, args.noise if args.noise is not None else 0.0, args.seed)
    else:
        ds = gen_blobs(_parse_centers(args.centers), args.n, args.noise if args.noise is not None else 1.0, args.seed)
    out = args.out or os.path.join(_output_dir(None), f"{args.dataset}.csv")
    save_csv(ds, out)
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


def cmd_train(args, flag_keys) -> int:
    cfg = resolve_run_config(args, flag_keys)
    if cfg.method not in METHODS:
        raise UsageError(f"unknown method {cfg.method!r}; choose from {', '.join(METHODS)}")
    data = _load_training_data(cfg)
    out_dir = _output_dir(cfg.out or None)
    model, history = fit_method(
        cfg.method, data, cfg.extractor_config(data.X.shape[1]), cfg.train_config(), cfg.members
    )
    ckpt = os.path.join(out_dir, "checkpoint.ddar")
    save_checkpoint(model, ckpt)
    hist_path = os.path.join(out_dir, "history.csv")
    tmp = hist_path + ".tmp"
    write_history_csv(history, tmp)
    os.replace(tmp, hist_path)
    atomic_write_text(os.path.join(out_dir, "manifest.txt"), manifest_text(cfg))
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _method_of(model, mc_passes: int) -> str:
    if isinstance(model, DdarModel):
        return "ddar"
    if isinstance(model, baselines.Ensemble):
        return "ensemble"
    return "dropout" if mc_passes > 0 else "softmax"


def _input_dim(model) -> int:
    if isinstance(model, baselines.Ensemble):
        return model.members[0].config.input_dim
    return model.config.input_dim


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    test = load_csv(args.data, has_labels=True)
    dim = _input_dim(model)
    if test.X.shape[1] != dim:
        raise DataError(f"{args.data} has {test.X.shape[1]} features, checkpoint expects {dim}")
    method = _method_of(model, args.mc_passes)
    labels, conf, unc = score(model, test.X, method, args.mc_passes, args.seed)
    unc_ood = None
    if args.ood:
        ood = load_csv(args.ood, has_labels=False)
        if ood.X.shape[1] != dim:
            raise DataError(f"{args.ood} has {ood.X.shape[1]} features, checkpoint expects {dim}")
        _, _, unc_ood = score(model, ood.X, method, args.mc_passes, args.seed)
    report = evaluate(labels, conf, unc, test.y, unc_ood, args.bins)
    out_dir = _output_dir(args.out)
    summary = {"method": method, **report_to_dict(report)}
    atomic_write_text(os.path.join(out_dir, "report.json"), json.dumps(summary, indent=2) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["set", "confidence", "uncertainty", "label", "prediction"])
    for c, u, t, p in report.per_point:
        w.writerow(["id", _num(c), _num(u), t, p])
    if unc_ood is not None:
        for u in unc_ood:
            w.writerow(["ood", "", _num(u), -1, ""])
    atomic_write_text(os.path.join(out_dir, "scores.csv"), buf.getvalue())
    print(json.dumps(summary))
    return EXIT_OK


def cmd_grid(args) -> int:
    model = load_checkpoint(args.checkpoint)
    method = _method_of(model, args.mc_passes)
    grid = uncertainty_grid(
        lambda X: score(model, X, method, args.mc_passes, args.seed),
        (args.xmin, args.xmax, args.ymin, args.ymax),
        args.resolution,
        input_dim=_input_dim(model),
    )
    pts = grid.points()
    lines = ["x,y,confidence,uncertainty"]
    for (x, y), c, u in zip(pts, grid.confidence, grid.uncertainty):
        lines.append(",".join(_num(v) for v in (x, y, c, u)))
    out = args.out or os.path.join(_output_dir(None), "grid.csv")
    atomic_write_text(out, "\n".join(lines) + "\n")
    print(f"wrote {len(pts)} grid rows to {out}")
    return EXIT_OK


def cmd_project(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = load_csv(args.data, has_labels=True)
    ood = load_csv(args.ood, has_labels=False)
    X = np.vstack([data.X, ood.X])
    if isinstance(model, DdarModel):
        trace = forward(model, X)
        emb = trace.z.value if args.space == "z" else trace.f_tilde.value
    elif isinstance(model, baselines.SoftmaxModel):
        emb = baselines.embed(model, X)
    else:
        raise UsageError("projection needs a ddar or softmax checkpoint")
    proj, _, _ = pca2(emb)
    tags = [f"id{int(c)}" for c in data.y] + ["ood"] * len(ood)
    lines = ["pc1,pc2,set"] + [f"{_num(a)},{_num(b)},{t}" for (a, b), t in zip(proj, tags)]
    out = args.out or os.path.join(_output_dir(None), "projection.csv")
    atomic_write_text(out, "\n".join(lines) + "\n")
    print(f"wrote {len(tags)} projected points to {out}")
    return EXIT_OK


def _parse_list(text: str, kind, name: str) -> list:
    try:
        items = [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse --{name} {text!r}") from None
    if not items:
        raise UsageError(f"--{name} is empty")
    return items


def _write_table(out_dir: str, stem: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) if isinstance(v, float) else v for v in r])
    atomic_write_text(os.path.join(out_dir, f"{stem}.csv"), buf.getvalue())
    pretty = [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    text = format_table(list(header), pretty)
    atomic_write_text(os.path.join(out_dir, f"{stem}.txt"), text)
    print(text, end="")


def _scenario_and_configs(args, flag_keys):
    cfg = resolve_run_config(args, flag_keys)
    scenario = Scenario(n_per_class=cfg.n, noise=cfg.noise, ood_radius=args.ood_radius)
    return cfg, scenario


def cmd_compare(args, flag_keys) -> int:
    methods = _parse_list(args.methods, str, "methods")
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    seeds = _parse_list(args.seeds, int, "seeds")
    cfg, scenario = _scenario_and_configs(args, flag_keys)
    header, rows, _ = compare(methods, seeds, cfg.extractor_config(2), cfg.train_config(), scenario,
                              cfg.members, args.mc_passes)
    _write_table(_output_dir(cfg.out or None), "compare", header, rows)
    return EXIT_OK


def cmd_ablate(args, flag_keys) -> int:
    lambdas = _parse_list(args.lambdas, float, "lambdas")
    subsets = _parse_list(args.losses, str, "losses")
    seeds = _parse_list(args.seeds, int, "seeds")
    cfg, scenario = _scenario_and_configs(args, flag_keys)
    try:
        header, rows, _ = ablate(lambdas, subsets, seeds, cfg.extractor_config(2), cfg.train_config(), scenario)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    _write_table(_output_dir(cfg.out or None), "ablate", header, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="ddar", description="Prototype-based single-pass uncertainty on synthetic data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    flag_keys = {}

    p_data = sub.add_parser("data", help="generate synthetic datasets")
    data_sub = p_data.add_subparsers(dest="data_command", required=True, parser_class=_Parser)
    g = data_sub.add_parser("gen", help="write a generated dataset as CSV")
    g.add_argument("--dataset", choices=["two-moons", "ring", "blobs"], required=True)
    g.add_argument("--n", type=int, default=500, help="points per class (ring: total points)")
    g.add_argument("--noise", type=float, default=None,
                   help="Gaussian noise std (ring: jitter, blobs: cluster std)")
    g.add_argument("--radius", type=float, default=3.0)
    g.add_argument("--centers", default="0,0;3,3")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")

    t = sub.add_parser("train", help="train a model and write checkpoint, history and manifest")
    t.add_argument("--config")
    flag_keys["train"] = _add_run_flags(t)

    e = sub.add_parser("eval", help="accuracy / ECE / AUROC report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ood")
    e.add_argument("--bins", type=int, default=15)
    e.add_argument("--mc-passes", type=int, default=0, help="score a softmax checkpoint with MC dropout")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    gr = sub.add_parser("grid", help="confidence/uncertainty surface of a 2-D model")
    gr.add_argument("--checkpoint", required=True)
    for name, v in zip(("xmin", "xmax", "ymin", "ymax"), DEFAULT_BOUNDS):
        gr.add_argument(f"--{name}", type=float, default=v)
    gr.add_argument("--resolution", type=int, default=100)
    gr.add_argument("--mc-passes", type=int, default=0)
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("--out")

    pr = sub.add_parser("project", help="2-D PCA projection of embeddings (pc1,pc2,set)")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--ood", required=True)
    pr.add_argument("--space", choices=["z", "discriminant"], default="discriminant")
    pr.add_argument("--out")

    c = sub.add_parser("compare", help="train/evaluate several methods over seeds")
    c.add_argument("--methods", default="softmax,ddar")
    c.add_argument("--seeds", default="1,2,3")
    c.add_argument("--ood-radius", type=float, default=3.0)
    c.add_argument("--mc-passes", type=int, default=10)
    c.add_argument("--config")
    flag_keys["compare"] = _add_run_flags(c, skip=("method", "data", "dataset", "data_seed", "seed"))

    a = sub.add_parser("ablate", help="sweep the loss weight and regularizer subsets")
    a.add_argument("--lambdas", default=",".join(str(v) for v in LAMBDA_GRID))
    a.add_argument("--losses", default="de", help="comma list of d, e, de")
    a.add_argument("--seeds", default="1,2,3")
    a.add_argument("--ood-radius", type=float, default=3.0)
    a.add_argument("--config")
    flag_keys["ablate"] = _add_run_flags(
        a, skip=("method", "data", "dataset", "data_seed", "seed", "loss_weight", "use_dissimilar", "use_entropy")
    )
    return parser, flag_keys


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser, flag_keys = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "data":
            return cmd_data(args)
        if args.command == "train":
            return cmd_train(args, flag_keys["train"])
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "grid":
            return cmd_grid(args)
        if args.command == "project":
            return cmd_project(args)
        if args.command == "compare":
            return cmd_compare(args, flag_keys["compare"])
        if args.command == "ablate":
            return cmd_ablate(args, flag_keys["ablate"])
    except UsageError as exc:
        print(f"ddar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"ddar: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"ddar: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"ddar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
