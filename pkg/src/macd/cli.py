"""Command-line entry point: ``macd {simulate,train,predict,evaluate,benchmark}``.

Every command reads a flat ``key = value`` config file (``--config``) and
accepts ``--set key=value`` overrides. Exit codes: 0 success, 2 invalid
input, 3 I/O failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import NumericalError, ParseError, ValidationError
from .expr_data import dropout_rate, format_float, load_expression_matrix, load_labels, write_expression_matrix
from .metrics import METRICS, accuracy_score, evaluate, read_proportions, write_proportions
from .model import MacdConfig, predict, train
from .pipeline import prepare_inference_data, prepare_training_data
from .pseudospot_sim import PseudoSpotConfig, SimulatedST, simulate_pseudospots

log = logging.getLogger("macd")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


def _int_pair(text):
    parts = [int(p) for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated integers")
    return tuple(parts)


# key -> parser; path-valued keys keep the raw string
KEYS = {
    "sc_expression": str, "sc_labels": str, "st_expression": str, "output_dir": str,
    "sim_expression": str, "sim_proportions": str, "checkpoint": str, "prediction": str,
    "truth": str, "methods": str,
    "top_k": int, "target_sum": float,
    "n_spots": int, "cells_min": int, "cells_max": int, "seed": int,
    "latent_dim": int, "encoder_hidden": int, "decoder_hidden": _int_pair, "head_hidden": int,
    "mask_rate": float, "lam": float, "grl_alpha": float, "lr": float, "batch_size": int,
    "epochs": int, "leaky_slope": float,
    "use_mask": _bool, "use_adversarial": _bool, "full_reconstruction": _bool,
}
ALIASES = {"lambda": "lam", "rho": "mask_rate"}
MODEL_KEYS = (
    "latent_dim", "encoder_hidden", "decoder_hidden", "head_hidden", "mask_rate", "lam", "grl_alpha",
    "lr", "batch_size", "epochs", "leaky_slope", "use_mask", "use_adversarial", "full_reconstruction",
)


@dataclass
class RunConfig:
    paths: dict = field(default_factory=dict)
    top_k: int = 200
    target_sum: float = 1e4
    simulation: PseudoSpotConfig = field(default_factory=PseudoSpotConfig)
    model: MacdConfig = field(default_factory=MacdConfig)
    truth: str | None = None
    methods: dict = field(default_factory=dict)

    def path(self, key, default=None):
        value = self.paths.get(key)
        if value:
            return value
        if default is not None:
            return os.path.join(self.paths.get("output_dir", "."), default)
        return None

    def require(self, *keys):
        """Validate that input paths are configured and exist."""
        for key in keys:
            value = self.paths.get(key)
            if not value:
                raise ValidationError(f"config key {key!r} is required")
            if not os.path.isfile(value):
                raise ValidationError(f"{key}: file not found: {value}")


def parse_config_text(text, source="<config>"):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def build_run_config(raw: dict) -> RunConfig:
    values = {}
    for key, text in raw.items():
        key = ALIASES.get(key, key)
        if key not in KEYS:
            raise ValidationError(f"unknown config key {key!r}")
        try:
            values[key] = KEYS[key](text)
        except ValueError as exc:
            raise ValidationError(f"bad value for {key!r}: {exc}") from None
    if "seed" not in values:
        env = os.environ.get("DECONV_SEED")
        try:
            values["seed"] = int(env) if env else 0
        except ValueError:
            raise ValidationError(f"DECONV_SEED must be an integer, got {env!r}") from None
    seed = values["seed"]
    sim_defaults = PseudoSpotConfig()
    simulation = PseudoSpotConfig(
        n_spots=values.get("n_spots", sim_defaults.n_spots),
        cells_per_spot_min=values.get("cells_min", sim_defaults.cells_per_spot_min),
        cells_per_spot_max=values.get("cells_max", sim_defaults.cells_per_spot_max),
        seed=seed,
    )
    model = MacdConfig(seed=seed, **{k: values[k] for k in MODEL_KEYS if k in values})
    methods = {}
    for item in filter(None, (s.strip() for s in values.get("methods", "").split(","))):
        if "=" not in item:
            raise ValidationError(f"methods entries must be name=path, got {item!r}")
        name, path = (s.strip() for s in item.split("=", 1))
        methods[name] = path
    path_keys = ("sc_expression", "sc_labels", "st_expression", "output_dir", "sim_expression",
                 "sim_proportions", "checkpoint", "prediction")
    top_k = values.get("top_k", 200)
    target_sum = values.get("target_sum", 1e4)
    if top_k < 1 or not target_sum > 0:
        raise ValidationError("top_k and target_sum must be positive")
    return RunConfig(
        paths={k: values[k] for k in path_keys if k in values},
        top_k=top_k,
        target_sum=target_sum,
        simulation=simulation,
        model=model,
        truth=values.get("truth"),
        methods=methods,
    )


def load_run_config(config_path, overrides=(), flags=None) -> RunConfig:
    raw = {}
    if config_path:
        if not os.path.isfile(config_path):
            raise ValidationError(f"config file not found: {config_path}")
        with open(config_path, encoding="utf-8") as fh:
            raw.update(parse_config_text(fh.read(), config_path))
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        raw[key] = value
    for key, value in (flags or {}).items():
        raw[key] = value
    return build_run_config(raw)


def _output_dir(cfg: RunConfig):
    out = cfg.paths.get("output_dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _simulate(cfg: RunConfig):
    sc = load_expression_matrix(cfg.paths["sc_expression"])
    labels = load_labels(cfg.paths["sc_labels"])
    return sc, labels, simulate_pseudospots(sc, labels, cfg.simulation)


def cmd_simulate(cfg: RunConfig) -> int:
    cfg.require("sc_expression", "sc_labels")
    _, _, sim = _simulate(cfg)
    out = _output_dir(cfg)
    expr_path = os.path.join(out, "sim_expression.tsv")
    prop_path = os.path.join(out, "sim_proportions.tsv")
    write_expression_matrix(sim.expression, expr_path)
    write_proportions(sim.proportions, prop_path)
    n, g = sim.expression.shape
    print(f"spots={n} genes={g} dropout_rate={dropout_rate(sim.expression):.6f}")
    print(f"wrote {expr_path}")
    print(f"wrote {prop_path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("sc_expression", "sc_labels", "st_expression")
    st = load_expression_matrix(cfg.paths["st_expression"])
    if cfg.paths.get("sim_expression") or cfg.paths.get("sim_proportions"):
        cfg.require("sim_expression", "sim_proportions")
        sc = load_expression_matrix(cfg.paths["sc_expression"])
        labels = load_labels(cfg.paths["sc_labels"])
        expr = load_expression_matrix(cfg.paths["sim_expression"])
        props = read_proportions(cfg.paths["sim_proportions"])
        props = props.reorder(expr.row_ids, labels.type_order)
        sim = SimulatedST(expr, props, [])
    else:
        sc, labels, sim = _simulate(cfg)
    real, sim_norm, panel = prepare_training_data(sc, labels, st, sim, cfg.top_k, cfg.target_sum)
    print(f"panel genes={len(panel.genes)} shared with ST={len(real.gene_names)} "
          f"real spots={real.shape[0]} simulated spots={sim_norm.expression.shape[0]}")

    def report(epoch, s1, s2):
        log.info("epoch %d stage1=%.6g stage2=%.6g", epoch, s1, s2)

    model = train(real, sim_norm, cfg.model, callback=report)
    model.metadata = {"target_sum": cfg.target_sum, "top_k": cfg.top_k}
    out = _output_dir(cfg)
    ckpt = cfg.path("checkpoint", "model.macd")
    save_checkpoint(model, ckpt)
    hist_path = os.path.join(out, "loss_history.tsv")
    with open(hist_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\tstage1\tstage2\n")
        for i, (a, b) in enumerate(model.loss_history, start=1):
            fh.write(f"{i}\t{format_float(a)}\t{format_float(b)}\n")
    print(f"epochs={len(model.loss_history)} final stage1={model.loss_history[-1][0]:.6g} "
          f"stage2={model.loss_history[-1][1]:.6g}")
    print(f"wrote {ckpt}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    cfg.require("st_expression")
    ckpt = cfg.path("checkpoint", "model.macd")
    if not os.path.isfile(ckpt):
        raise ValidationError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    st = load_expression_matrix(cfg.paths["st_expression"])
    target_sum = model.metadata.get("target_sum", cfg.target_sum)
    present = set(st.gene_names)
    missing = [g for g in model.gene_order if g not in present]
    if missing:
        raise ValidationError(f"ST data lacks {len(missing)} model genes: {', '.join(missing)}")
    P = predict(model, prepare_inference_data(st, model.gene_order, target_sum))
    P.check_simplex(1e-6)
    _output_dir(cfg)
    out = cfg.path("prediction", "proportions.tsv")
    write_proportions(P, out)
    print(f"spots={len(P.spot_ids)} types={len(P.type_order)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    pred_path = cfg.path("prediction", "proportions.tsv")
    if not cfg.truth:
        raise ValidationError("config key 'truth' is required")
    for p in (pred_path, cfg.truth):
        if not os.path.isfile(p):
            raise ValidationError(f"file not found: {p}")
    report = evaluate(read_proportions(pred_path), read_proportions(cfg.truth))
    out = os.path.join(_output_dir(cfg), "evaluation.tsv")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_tsv())
    print(report.summary())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_benchmark(cfg: RunConfig) -> int:
    if not cfg.truth or not os.path.isfile(cfg.truth):
        raise ValidationError(f"truth file not found: {cfg.truth}")
    if not cfg.methods:
        raise ValidationError("config key 'methods' must list at least one name=path")
    truth = read_proportions(cfg.truth)
    averages = {}
    for name, path in cfg.methods.items():
        if not os.path.isfile(path):
            raise ValidationError(f"method {name!r}: cannot read {path}")
        try:
            averages[name] = evaluate(read_proportions(path), truth).averages
        except ValidationError as exc:
            raise ValidationError(f"method {name!r} ({path}): {exc}") from None
    scores = accuracy_score(averages)
    order = sorted(averages, key=lambda m: (-scores[m], m))
    out = os.path.join(_output_dir(cfg), "benchmark.tsv")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["method", *METRICS, "as"]) + "\n")
        for m in order:
            fh.write("\t".join([m, *(format_float(averages[m][k]) for k in METRICS), format_float(scores[m])]) + "\n")
    width = max(len(m) for m in order)
    print(f"{'method':<{width}}  " + "  ".join(f"{k:>8}" for k in (*METRICS, "as")))
    for m in order:
        vals = [averages[m][k] for k in METRICS] + [scores[m]]
        print(f"{m:<{width}}  " + "  ".join(f"{v:8.4f}" for v in vals))
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="macd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value run configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        if name == "train":
            p.add_argument("--no-mask", action="store_true", help="ablation: no input masking")
            p.add_argument("--no-adversarial", action="store_true", help="ablation: drop classifier/discriminator losses")
            p.add_argument("--full-reconstruction", action="store_true", help="ablation: reconstruction loss over all entries")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    flags = {}
    if getattr(args, "no_mask", False):
        flags["use_mask"] = "false"
    if getattr(args, "no_adversarial", False):
        flags["use_adversarial"] = "false"
    if getattr(args, "full_reconstruction", False):
        flags["full_reconstruction"] = "true"
    try:
        cfg = load_run_config(args.config, args.overrides, flags)
        return COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
