"""Command-line interface: train, predict, evaluate, synth, patchify.

Configuration comes from an optional flat key-value file with dotted
sections (``awlel.vartheta = 1.0``) plus per-key command-line overrides.
Unknown keys are rejected.  Exit codes: 0 ok, 2 missing/unreadable input,
3 shape or dimension error, 4 numerical failure, 64 usage.  Logs go to
stderr; data goes to stdout or ``--out``.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .awlel import AwlelConfig
from .bls import BlsConfig
from .data import MimlDataset, generate_synthetic, load_dataset, patchify_image, save_dataset, split_dataset, Bag
from .errors import BmimlError, ConfigError, DimensionError, ModelFormatError, NumericalError, ParseError
from .metrics import MetricsReport, compute_all, cross_validate
from .pipeline import PipelineConfig, VARIANTS, decide, fit_bmiml, load_model, predict_bags, save_model
from .smipr import SmiprConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SHAPE = 3
EXIT_NUMERIC = 4
EXIT_USAGE = 64


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_int_list(v: str):
    v = v.strip()
    return tuple(int(x) for x in v.split(",")) if v else ()


def _parse_float_list(v: str):
    parts = [float(x) for x in str(v).split(",")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _parse_clusters(v: str):
    return None if v.strip().lower() == "auto" else int(v)


# key -> (parser, help); mirrors PipelineConfig and its nested configs
CONFIG_SCHEMA = {
    "seed": (int, "master seed; all component seeds derive from it"),
    "tau": (_parse_float_list, "decision threshold(s); scalar or comma list per class"),
    "global_view": (str, "bag summary for label enhancement: mean|max|concat"),
    "outer_rounds": (int, "experimental enhancement/regression feedback rounds"),
    "bls.m1": (int, "feature node groups"),
    "bls.k1": (int, "nodes per feature group"),
    "bls.m2": (int, "enhancement node groups"),
    "bls.k2": (int, "nodes per enhancement group"),
    "bls.feat_act": (str, "feature activation: sigmoid|tanh|tribas"),
    "bls.enh_act": (str, "enhancement activation"),
    "bls.lam": (float, "BLS ridge regularizer"),
    "bls.standardize": (_parse_bool, "per-column input standardization"),
    "awlel.lam": (float, "enhancement ridge regularizer"),
    "awlel.vartheta": (float, "pull of retargeted labels toward ground truth"),
    "awlel.max_iters": (int, "alternating update cap"),
    "awlel.tol": (float, "relative change of T that counts as converged"),
    "awlel.eps_floor": (float, "residual floor for the reciprocal weights"),
    "awlel.retarget_act": (str, "retargeting node activation"),
    "awlel.include_raw_features": (_parse_bool, "include the raw block in the design"),
    "smipr.num_clusters": (_parse_clusters, "medoid count, or 'auto'"),
    "smipr.num_layers": (int, "network layers (>= 2)"),
    "smipr.hidden_widths": (_parse_int_list, "comma list, one per layer strictly inside"),
    "smipr.eta": (float, "gradient-descent learning rate"),
    "smipr.epochs": (int, "full-batch training epochs"),
    "smipr.hidden_act": (str, "hidden activation"),
    "smipr.layer2_weight_rule": (str, "paper-complement|identity"),
    "smipr.clustering_max_iters": (int, "k-medoids iteration cap"),
    "smipr.shuffle_each_epoch": (_parse_bool, "shuffle bag instances every epoch"),
}


def _flag_dest(key: str) -> str:
    return "cfg__" + key.replace(".", "__")


def read_config_file(path) -> dict:
    """Parse the flat ``key = value`` config format; unknown keys are errors."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise FileNotFoundError(path) from None
    for no, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"{path}:{no}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{no}: unknown config key {key!r}")
        parser = CONFIG_SCHEMA[key][0]
        try:
            values[key] = parser(raw.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{no}: bad value for {key}: {exc}") from None
    return values


def build_pipeline_config(values: dict) -> PipelineConfig:
    """Assemble a PipelineConfig from dotted config keys."""
    def section(prefix):
        return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}

    top = {k: v for k, v in values.items() if "." not in k}
    return PipelineConfig(
        bls_config=BlsConfig(**section("bls")),
        awlel_config=AwlelConfig(**section("awlel")),
        smipr_config=SmiprConfig(**section("smipr")),
        **top,
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key-value config file (dotted sections)")
    for key, (_, help_text) in CONFIG_SCHEMA.items():
        p.add_argument(f"--{key}", dest=_flag_dest(key), metavar="V", help=help_text)


def _resolve_config(args) -> PipelineConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, (parser, _) in CONFIG_SCHEMA.items():
        raw = getattr(args, _flag_dest(key), None)
        if raw is not None:
            values[key] = parser(raw) if isinstance(raw, str) else raw
    try:
        return build_pipeline_config(values)
    except TypeError as exc:
        raise ConfigError(f"bad configuration: {exc}") from None


def _load_data(path) -> MimlDataset:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return load_dataset(path)


def _threads(args):
    n = args.threads if args.threads is not None else os.environ.get("BMIML_THREADS")
    if n is not None:
        n = int(n)
        if n < 1:
            raise ConfigError("--threads must be >= 1")
    return n  # accepted and validated; the current build computes sequentially


def _log(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    _threads(args)
    config = _resolve_config(args)
    ds = _load_data(args.data)
    t0 = time.perf_counter()
    model = fit_bmiml(ds, config, variant=args.module)
    elapsed = time.perf_counter() - t0
    save_model(model, args.out)
    if model.awlel_model is not None and model.awlel_model.state is not None:
        st = model.awlel_model.state
        _log(
            f"awlel: {len(st.delta_history)} iteration(s), objective "
            f"{st.objective_history[0]:.6g} -> {st.objective_history[-1]:.6g}"
        )
        if args.dump_objective:
            with open(args.dump_objective, "w", encoding="utf-8") as f:
                f.write("iter,objective,delta_T\n")
                for i, d in enumerate(st.delta_history):
                    f.write(f"{i + 1},{st.objective_history[2 * i + 1]!r},{d!r}\n")
    if model.smipr_net is not None and model.smipr_net.loss_history:
        hist = model.smipr_net.loss_history
        _log(f"smipr: {len(hist) - 1} epoch(s), loss {hist[0]:.6g} -> {hist[-1]:.6g}")
        if args.dump_loss:
            with open(args.dump_loss, "w", encoding="utf-8") as f:
                f.write("epoch,E\n")
                for e, v in enumerate(hist):
                    f.write(f"{e},{v!r}\n")
    _log(f"training time: {elapsed:.3f} s")
    _log(f"model written to {args.out}")
    return EXIT_OK


def _emit(text: str, out):
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_predict(args) -> int:
    _threads(args)
    if not os.path.exists(args.model):
        raise FileNotFoundError(args.model)
    model = load_model(args.model)
    ds = _load_data(args.data)
    t0 = time.perf_counter()
    pred = predict_bags(model, ds.bags)
    labels = pred.labels
    if args.tau is not None:
        tau = np.atleast_1d(np.asarray(_parse_float_list(args.tau), dtype=np.float64))
        if tau.size == 1:
            tau = np.full(model.num_classes, tau[0])
        labels = decide(pred.probabilities, tau)
    if args.force_top1:
        labels = labels.copy()
        empty = labels.sum(axis=1) == 0
        labels[np.nonzero(empty)[0], np.argmax(pred.probabilities[empty], axis=1)] = 1
    k = pred.probabilities.shape[1]
    if args.format == "csv":
        lines = ["bag_id," + ",".join(f"prob_{c + 1}" for c in range(k)) + "," + ",".join(f"label_{c + 1}" for c in range(k))]
        for i, bag_id in enumerate(pred.bag_ids):
            probs = ",".join(repr(float(v)) for v in pred.probabilities[i])
            labs = ",".join(str(int(v)) for v in labels[i])
            lines.append(f"{bag_id},{probs},{labs}")
        _emit("\n".join(lines) + "\n", args.out)
    else:
        rows = []
        for i, bag_id in enumerate(pred.bag_ids):
            rows.append(json.dumps({
                "bag_id": bag_id,
                "probabilities": [float(v) for v in pred.probabilities[i]],
                "labels": [int(v) for v in labels[i]],
            }, sort_keys=True))
        _emit("\n".join(rows) + "\n", args.out)
    _log(f"prediction time: {time.perf_counter() - t0:.3f} s ({len(pred.bag_ids)} bags)")
    return EXIT_OK


def _parse_split(spec: str):
    parts = spec.split("/")
    if len(parts) != 3:
        raise ConfigError(f"--split expects A/B/C percentages, got {spec!r}")
    try:
        fractions = [float(p) / 100.0 for p in parts]
    except ValueError:
        raise ConfigError(f"--split expects numbers, got {spec!r}") from None
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ConfigError(f"--split percentages must be positive and sum to 100, got {spec!r}")
    return tuple(fractions)


def _evaluate_variant(ds, config, args, variant) -> dict:
    if args.split:
        fractions = _parse_split(args.split)
        split = split_dataset(ds, fractions, seed=config.seed)
        train = ds.subset(split.train_indices, name=f"{ds.name}[train]")
        test_bags = [ds.bags[i] for i in split.test_indices]
        model = fit_bmiml(train, config, variant=variant)
        pred = predict_bags(model, test_bags)
        truth = np.stack([b.label for b in test_bags])
        fold = compute_all(pred.probabilities, pred.labels, truth)
        report = MetricsReport(per_fold=(fold,))
        extra = {"split_sizes": {"train": len(split.train_indices),
                                 "validation": len(split.validation_indices),
                                 "test": len(split.test_indices)}}
    else:
        report = cross_validate(ds, config, folds=args.folds, seed=config.seed, variant=variant)
        extra = {"folds": args.folds}
    payload = report.to_dict()
    payload.update(extra)
    payload["variant"] = variant
    return payload


def cmd_evaluate(args) -> int:
    _threads(args)
    config = _resolve_config(args)
    ds = _load_data(args.data)
    t0 = time.perf_counter()
    variants = list(VARIANTS) if args.ablation else [args.module]
    results = [_evaluate_variant(ds, config, args, v) for v in variants]
    elapsed = time.perf_counter() - t0
    if args.json:
        text = json.dumps(results[0] if len(results) == 1 else results, sort_keys=True) + "\n"
    elif args.ablation:
        header = f"{'variant':<10}" + "".join(f"{m:>16}" for m in ("HL", "OE", "RL", "AP"))
        lines = [header, "-" * len(header)]
        for payload in results:
            cells = "".join(
                f"{payload[m]:.3f}±{payload['std'][m]:.3f}".rjust(16)
                for m in ("hl", "oe", "rl", "ap")
            )
            lines.append(f"{payload['variant']:<10}" + cells)
        text = "\n".join(lines) + "\n"
    else:
        payload = results[0]
        lines = [f"{'metric':<22}{'mean':>10}{'std':>10}", "-" * 42]
        for key, name in (("hl", "hamming loss"), ("oe", "one error"), ("rl", "ranking loss"), ("ap", "avg precision")):
            lines.append(f"{name:<22}{payload[key]:>10.4f}{payload['std'][key]:>10.4f}")
        if "split_sizes" in payload:
            lines.append(f"split sizes: {payload['split_sizes']}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    _log(f"evaluation time: {elapsed:.3f} s")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = generate_synthetic(
        num_bags=args.bags,
        instances_per_bag=args.instances,
        dim=args.dim,
        num_classes=args.k,
        noise_std=args.noise,
        seed=args.seed,
    )
    save_dataset(ds, args.out, format=args.format)
    _log(f"wrote {ds.num_bags} bags (D={ds.instance_dim}, K={ds.num_classes}) to {args.out}")
    return EXIT_OK


def cmd_patchify(args) -> int:
    if not os.path.exists(args.input):
        raise FileNotFoundError(args.input)
    with np.load(args.input) as npz:
        if "images" not in npz or "labels" not in npz:
            raise ParseError(f"{args.input}: need arrays 'images' and 'labels'")
        images = npz["images"]
        labels = npz["labels"]
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise DimensionError(f"images must be (B, H, W[, C]), got {images.shape}")
    if labels.ndim != 2 or labels.shape[0] != images.shape[0]:
        raise DimensionError(f"labels must be (B, K) aligned with images, got {labels.shape}")
    bags = []
    for i in range(images.shape[0]):
        instances = patchify_image(images[i], mode=args.mode, span=args.span)
        bags.append(Bag(np.stack(instances), labels[i], f"img{i:05d}"))
    ds = MimlDataset(bags, name="patchified")
    save_dataset(ds, args.out, format=args.format)
    _log(
        f"wrote {ds.num_bags} bags with {bags[0].num_instances} instance(s) each "
        f"(D={ds.instance_dim}) to {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bmiml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="fit a model and write the binary container")
    p.add_argument("--data", required=True, help="dataset file (csv-bags or binary-bags)")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--module", choices=VARIANTS, default="bmiml", help="ablation variant to train")
    p.add_argument("--dump-objective", metavar="CSV", help="write iter,objective,delta_T trace")
    p.add_argument("--dump-loss", metavar="CSV", help="write epoch,E loss trace")
    p.add_argument("--threads", type=int, help="worker cap (results never depend on it)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--tau", help="override the stored decision threshold(s)")
    p.add_argument("--force-top1", action="store_true", help="emit the argmax class when the label set is empty")
    p.add_argument("--threads", type=int, help="worker cap (results never depend on it)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="cross-validate or split-evaluate on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--split", metavar="A/B/C", help="use a fixed percentage split instead of folds")
    p.add_argument("--module", choices=VARIANTS, default="bmiml")
    p.add_argument("--ablation", action="store_true", help="evaluate all three variants")
    p.add_argument("--json", action="store_true", help="emit JSON instead of the text table")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--threads", type=int, help="worker cap (results never depend on it)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic planted-prototype dataset")
    p.add_argument("--bags", type=int, required=True)
    p.add_argument("--instances", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv-bags", "binary-bags"), default="csv-bags")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("patchify", help="cut stacked raster images (.npz) into a bag dataset")
    p.add_argument("--input", required=True, help=".npz with arrays 'images' (B,H,W[,C]) and 'labels' (B,K)")
    p.add_argument("--span", type=int, default=64)
    p.add_argument("--mode", choices=("strip", "grid"), default="strip")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv-bags", "binary-bags"), default="csv-bags")
    p.set_defaults(func=cmd_patchify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return code
    except FileNotFoundError as exc:
        print(json.dumps({"error": "input-missing", "message": f"no such file: {exc}"}), file=sys.stderr)
        return EXIT_INPUT
    except (ParseError, ModelFormatError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT
    except DimensionError as exc:
        print(json.dumps({"error": "dimension-mismatch", "message": str(exc)}), file=sys.stderr)
        return EXIT_SHAPE
    except NumericalError as exc:
        print(json.dumps({"error": "numerical-failure", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except BmimlError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
