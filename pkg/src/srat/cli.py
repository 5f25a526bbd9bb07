"""Config-driven command line: theory sweeps, training, evaluation,
experiment grids, dataset construction, and feature export.

Exit codes: 0 success, 1 a verified inequality failed inside its
hypothesis, 2 usage/config/ingestion problems, 3 numeric failure during
training. Configs are JSON; unknown keys are rejected up front. All
artifacts land inside the designated output directory; the environment
variable SRAT_OUTPUT_ROOT re-roots relative output paths.
"""

import argparse
import copy
import csv
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from srat.attack import AttackConfig
from srat.data import (
    ImbalanceSpec,
    LabeledDataset,
    apply_imbalance,
    load_csv,
    reduced_classes,
    sample_gaussian_mixture,
    save_csv,
    write_manifest,
)
from srat.errors import ConfigError, DomainError, IngestionError, SratError, TrainingError
from srat.evaluation import evaluate, export_features, per_class_csv
from srat.losses import LossConfig
from srat.mlp import ModelSpec, load_model, save_model
from srat.theory import (
    GaussianMixtureSpec,
    StdConvention,
    grid_search_bias,
    optimal_bias,
    verify_theorem1,
    verify_theorem2,
)
from srat.training import STREAM_EVAL, TrainConfig, train_srat

OUTPUT_ROOT_ENV = "SRAT_OUTPUT_ROOT"


# ---------------------------------------------------------------------------
# Config parsing (strict: unknown keys are errors)
# ---------------------------------------------------------------------------


def _check_keys(doc: dict, required, optional, where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(doc) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(doc)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _attack_from_dict(doc: dict, where: str) -> AttackConfig:
    _check_keys(
        doc,
        required=("epsilon", "step_size", "num_steps"),
        optional=("random_start", "clip_min", "clip_max"),
        where=where,
    )
    try:
        return AttackConfig(
            epsilon=float(doc["epsilon"]),
            step_size=float(doc["step_size"]),
            num_steps=int(doc["num_steps"]),
            random_start=bool(doc.get("random_start", True)),
            clip_min=None if doc.get("clip_min") is None else float(doc["clip_min"]),
            clip_max=None if doc.get("clip_max") is None else float(doc["clip_max"]),
        )
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _loss_from_dict(doc: dict, where: str) -> LossConfig:
    # tau and lam are deliberately mandatory in experiment files so that
    # no silent default enters a reported run.
    _check_keys(
        doc,
        required=("kind", "tau", "lam"),
        optional=("focal_gamma", "ldam_max_margin", "ldam_scale", "cb_beta"),
        where=where,
    )
    try:
        return LossConfig(
            kind=str(doc["kind"]),
            tau=float(doc["tau"]),
            lam=float(doc["lam"]),
            focal_gamma=float(doc.get("focal_gamma", 2.0)),
            ldam_max_margin=float(doc.get("ldam_max_margin", 0.5)),
            ldam_scale=float(doc.get("ldam_scale", 30.0)),
            cb_beta=float(doc.get("cb_beta", 0.9999)),
        )
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _train_from_dict(doc: dict, where: str) -> TrainConfig:
    _check_keys(
        doc,
        required=(
            "total_epochs",
            "defer_epoch",
            "batch_size",
            "lr",
            "weighting",
            "seed",
            "loss",
            "attack",
        ),
        optional=("lr_milestones", "lr_decay", "manual_weights", "momentum", "eval_every"),
        where=where,
    )
    try:
        return TrainConfig(
            total_epochs=int(doc["total_epochs"]),
            defer_epoch=int(doc["defer_epoch"]),
            batch_size=int(doc["batch_size"]),
            lr=float(doc["lr"]),
            lr_milestones=tuple(int(m) for m in doc.get("lr_milestones", ())),
            lr_decay=float(doc.get("lr_decay", 0.1)),
            weighting=str(doc["weighting"]),
            manual_weights=(
                tuple(float(w) for w in doc["manual_weights"])
                if doc.get("manual_weights") is not None
                else None
            ),
            momentum=float(doc.get("momentum", 0.0)),
            seed=int(doc["seed"]),
            eval_every=int(doc.get("eval_every", 10)),
            loss=_loss_from_dict(doc["loss"], f"{where}.loss"),
            attack=_attack_from_dict(doc["attack"], f"{where}.attack"),
        )
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _model_from_dict(doc: dict, where: str) -> ModelSpec:
    _check_keys(doc, required=(), optional=("hidden",), where=where)
    try:
        return ModelSpec(hidden=tuple(int(h) for h in doc.get("hidden", (32, 32))))
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


class ExperimentConfig:
    """Validated bundle: dataset + model + training + evaluation attack."""

    def __init__(self, doc: dict):
        _check_keys(
            doc,
            required=("dataset", "model", "train", "eval_attack", "output_dir"),
            optional=(),
            where="experiment",
        )
        self.raw = copy.deepcopy(doc)
        self.dataset = self._parse_dataset(doc["dataset"])
        self.model = _model_from_dict(doc["model"], "model")
        self.train = _train_from_dict(doc["train"], "train")
        self.eval_attack = _attack_from_dict(doc["eval_attack"], "eval_attack")
        self.output_dir = str(doc["output_dir"])

    @staticmethod
    def _parse_dataset(doc: dict) -> dict:
        if not isinstance(doc, dict) or "kind" not in doc:
            raise ConfigError("dataset: missing 'kind'")
        kind = doc["kind"]
        if kind == "synthetic":
            _check_keys(
                doc,
                required=(
                    "kind",
                    "eta",
                    "sigma",
                    "dim",
                    "imbalance_ratio",
                    "n_minority_train",
                    "n_test_per_class",
                    "seed",
                ),
                optional=("under_classes",),
                where="dataset",
            )
        elif kind == "csv":
            _check_keys(
                doc,
                required=("kind", "train_path", "test_path"),
                optional=("num_classes", "imbalance", "seed", "under_classes"),
                where="dataset",
            )
            if "imbalance" in doc:
                _check_keys(
                    doc["imbalance"],
                    required=("kind", "ratio", "base_count"),
                    optional=(),
                    where="dataset.imbalance",
                )
        else:
            raise ConfigError(f"dataset: unknown kind {kind!r}")
        return copy.deepcopy(doc)

    def build_datasets(self):
        """Returns (train_set, test_set, partition)."""
        doc = self.dataset
        if doc["kind"] == "synthetic":
            try:
                spec = GaussianMixtureSpec(
                    eta=float(doc["eta"]),
                    sigma=float(doc["sigma"]),
                    dim=int(doc["dim"]),
                    imbalance_ratio=float(doc["imbalance_ratio"]),
                )
            except DomainError as exc:
                raise ConfigError(f"dataset: {exc}") from exc
            seed = int(doc["seed"])
            train_set = sample_gaussian_mixture(
                spec, int(doc["n_minority_train"]), seed=seed
            )
            balanced = GaussianMixtureSpec(
                spec.eta, spec.sigma, spec.dim, imbalance_ratio=1.0
            )
            test_set = sample_gaussian_mixture(
                balanced, int(doc["n_test_per_class"]), seed=seed + 1
            )
            partition = [1]  # the minority (y = -1) class
        else:
            num_classes = doc.get("num_classes")
            train_set = load_csv(doc["train_path"], num_classes)
            test_set = load_csv(doc["test_path"], num_classes or train_set.num_classes)
            partition = []
            if "imbalance" in doc:
                imb = doc["imbalance"]
                spec = ImbalanceSpec(
                    kind=str(imb["kind"]),
                    ratio=float(imb["ratio"]),
                    base_count=int(imb["base_count"]),
                )
                train_set = apply_imbalance(train_set, spec, int(doc.get("seed", 0)))
                partition = reduced_classes(spec, train_set.num_classes)
        if "under_classes" in doc:
            partition = [int(c) for c in doc["under_classes"]]
        return train_set, test_set, partition


def _resolve_out(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _attack_arg(text: str) -> AttackConfig:
    """Attack given inline as JSON or as a path to a JSON file."""
    candidate = Path(text)
    if candidate.suffix == ".json" and candidate.exists():
        doc = _load_json(candidate)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--attack: invalid JSON ({exc})") from exc
    return _attack_from_dict(doc, "attack")


# ---------------------------------------------------------------------------
# Experiment runner shared by train and sweep
# ---------------------------------------------------------------------------


def _run_experiment(cfg: ExperimentConfig, run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")

    train_set, test_set, partition = cfg.build_datasets()
    eval_seed = (cfg.train.seed, STREAM_EVAL)

    def eval_fn(model, epoch):
        report = evaluate(model, test_set, cfg.eval_attack, partition, seed=eval_seed)
        return {
            "overall_standard": report.overall_standard,
            "overall_robust": report.overall_robust,
            "under_standard": report.under_represented_standard,
            "under_robust": report.under_represented_robust,
        }

    model, history = train_srat(train_set, cfg.model, cfg.train, eval_fn=eval_fn)

    save_model(model, run_dir / "model.ckpt", seed=cfg.train.seed)
    history.to_csv(run_dir / "history.csv")
    report = evaluate(model, test_set, cfg.eval_attack, partition, seed=eval_seed)
    report.to_json(run_dir / "metrics.json")
    per_class_csv(report, run_dir / "per_class.csv")
    return report


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = ExperimentConfig(_load_json(args.config))
    run_dir = _resolve_out(args.out if args.out else cfg.output_dir)
    report = _run_experiment(cfg, run_dir)
    print(
        f"run dir: {run_dir}\n"
        f"overall standard {report.overall_standard:.2f} | "
        f"robust {report.overall_robust:.2f} | "
        f"under standard {report.under_represented_standard:.2f} | "
        f"under robust {report.under_represented_robust:.2f}"
    )
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    data = load_csv(args.data)
    attack = _attack_arg(args.attack)
    partition = [int(c) for c in args.under.split(",") if c != ""] if args.under else []
    out_dir = _resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, data, attack, partition, seed=args.seed)
    report.to_json(out_dir / "metrics.json")
    per_class_csv(report, out_dir / "per_class.csv")
    print(
        f"overall standard {report.overall_standard:.2f} | "
        f"robust {report.overall_robust:.2f}"
    )
    return 0


def cmd_export_features(args) -> int:
    model = load_model(args.checkpoint)
    data = load_csv(args.data)
    attack = _attack_arg(args.attack) if args.attack else None
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_features(model, data, out, attack_config=attack, seed=args.seed)
    print(f"wrote {out}")
    return 0


def cmd_make_dataset(args) -> int:
    out_dir = _resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "synthetic":
        spec = GaussianMixtureSpec(
            eta=args.eta, sigma=args.sigma, dim=args.dim, imbalance_ratio=args.ratio
        )
        train_set = sample_gaussian_mixture(spec, args.n_minority, seed=args.seed)
        save_csv(train_set, out_dir / "train.csv")
        write_manifest(
            out_dir / "manifest.json",
            train_set,
            seed=args.seed,
            extra={"mixture": spec.to_dict()},
        )
        if args.n_test_per_class:
            balanced = GaussianMixtureSpec(
                spec.eta, spec.sigma, spec.dim, imbalance_ratio=1.0
            )
            test_set = sample_gaussian_mixture(
                balanced, args.n_test_per_class, seed=args.seed + 1
            )
            save_csv(test_set, out_dir / "test.csv")
    else:
        if not args.input:
            raise ConfigError("--input is required for step/exp imbalance")
        balanced = load_csv(args.input)
        base = balanced.class_counts[0]
        spec = ImbalanceSpec(kind=args.kind, ratio=args.ratio, base_count=base)
        shrunk = apply_imbalance(balanced, spec, seed=args.seed)
        save_csv(shrunk, out_dir / "train.csv")
        write_manifest(out_dir / "manifest.json", shrunk, seed=args.seed, imbalance=spec)
    print(f"wrote {out_dir}")
    return 0


def _conventions(name: str):
    if name == "both":
        return [StdConvention.SUMMED, StdConvention.EXACT]
    return [StdConvention(name)]


def cmd_theory(args) -> int:
    out_dir = _resolve_out(args.out)
    convs = _conventions(args.convention)
    rows: list[dict] = []
    reports: list[dict] = []
    failures = 0

    if args.thm == "lemma":
        for conv, eta, sigma, d, log_ratio in itertools.product(
            convs, args.eta, args.sigma, args.d, args.log_rho_over_k
        ):
            spec = GaussianMixtureSpec(eta, sigma, d, args.K)
            rho = args.K * float(np.exp(log_ratio))
            closed = optimal_bias(spec, rho, conv)
            searched, resolution = grid_search_bias(spec, rho, conv, args.points)
            ok = abs(closed - searched) <= 2 * resolution
            failures += 0 if ok else 1
            rows.append(
                {
                    "convention": conv.value,
                    "eta": eta,
                    "sigma": sigma,
                    "d": d,
                    "K": args.K,
                    "rho": rho,
                    "bias_closed": closed,
                    "bias_grid": searched,
                    "resolution": resolution,
                    "ok": ok,
                }
            )
    else:
        verify = verify_theorem1 if args.thm == "1" else verify_theorem2
        for conv, eta, d, log_k, s1, s2 in itertools.product(
            convs, args.eta, args.d, args.logK, args.sigma1, args.sigma2
        ):
            if not s1 < s2:
                continue
            k = float(np.exp(log_k))
            spec1 = GaussianMixtureSpec(eta, s1, d, k)
            spec2 = GaussianMixtureSpec(eta, s2, d, k)
            report = verify(spec1, spec2, conv)
            if report.precondition_met and not report.holds:
                failures += 1
            reports.append(report.to_dict())
            rows.append(
                {
                    "thm": args.thm,
                    "convention": conv.value,
                    "eta": eta,
                    "sigma1": s1,
                    "sigma2": s2,
                    "d": d,
                    "K": k,
                    "lhs": report.lhs,
                    "rhs": report.rhs,
                    "holds": report.holds,
                    "precondition_met": report.precondition_met,
                    "bias1_rho1": optimal_bias(spec1, 1.0, conv),
                    "bias2_rho1": optimal_bias(spec2, 1.0, conv),
                    "bias1_rhoK": optimal_bias(spec1, k, conv),
                    "bias2_rhoK": optimal_bias(spec2, k, conv),
                }
            )

    if not rows:
        raise ConfigError("the requested grid is empty")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "reports.json", "w", encoding="utf-8") as fh:
        json.dump(reports if reports else rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows)} grid points, {failures} violation(s); wrote {out_dir}")
    return 1 if failures else 0


def _set_dotted(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"vary key {dotted!r} does not address the base config")
        node = node[part]
    if not isinstance(node, dict):
        raise ConfigError(f"vary key {dotted!r} does not address the base config")
    node[parts[-1]] = value


def cmd_sweep(args) -> int:
    grid = _load_json(args.config)
    _check_keys(
        grid,
        required=("base", "vary", "seeds", "output_dir"),
        optional=(),
        where="sweep",
    )
    base = grid["base"]
    vary = grid["vary"]
    seeds = [int(s) for s in grid["seeds"]]
    if not isinstance(vary, dict) or not all(isinstance(v, list) for v in vary.values()):
        raise ConfigError("sweep.vary must map dotted keys to value lists")
    out_dir = _resolve_out(args.out if args.out else grid["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    keys = sorted(vary)
    rows = []
    for combo_idx, values in enumerate(itertools.product(*(vary[k] for k in keys))):
        for seed in seeds:
            doc = copy.deepcopy(base)
            for key, value in zip(keys, values):
                _set_dotted(doc, key, value)
            _set_dotted(doc, "train.seed", seed)
            run_dir = out_dir / f"run_{combo_idx:03d}_seed{seed}"
            doc["output_dir"] = str(run_dir)
            cfg = ExperimentConfig(doc)
            report = _run_experiment(cfg, run_dir)
            row = {key: value for key, value in zip(keys, values)}
            row.update(
                {
                    "seed": seed,
                    "overall_standard": report.overall_standard,
                    "overall_robust": report.overall_robust,
                    "under_standard": report.under_represented_standard,
                    "under_robust": report.under_represented_robust,
                    "per_class_standard": ";".join(
                        repr(v) for v in report.per_class_standard
                    ),
                    "per_class_robust": ";".join(
                        repr(v) for v in report.per_class_robust
                    ),
                }
            )
            rows.append(row)

    with open(out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"{len(rows)} runs; wrote {out_dir / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srat",
        description="Reweighted adversarial training workbench with feature "
        "separation and closed-form mixture analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", help="verify closed-form bias and ordering claims")
    p.add_argument("--thm", choices=["lemma", "1", "2"], required=True)
    p.add_argument("--convention", choices=["summed", "exact", "both"], default="both")
    p.add_argument("--eta", type=float, nargs="+", default=[1.0])
    p.add_argument("--d", type=int, nargs="+", default=[5])
    p.add_argument("--sigma", type=float, nargs="+", default=[1.0], help="lemma mode")
    p.add_argument("--sigma1", type=float, nargs="+", default=[1.0])
    p.add_argument("--sigma2", type=float, nargs="+", default=[2.0])
    p.add_argument("--logK", type=float, nargs="+", default=[4.0])
    p.add_argument(
        "--log-rho-over-k",
        dest="log_rho_over_k",
        type=float,
        nargs="+",
        default=[-1.5, 0.0, 1.5],
        help="lemma mode reweighting offsets",
    )
    p.add_argument("--K", type=float, default=20.0, help="lemma mode imbalance ratio")
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("train", help="run one training config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the config's output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", required=True, help="JSON literal or .json file")
    p.add_argument("--under", default="", help="comma-separated class indices")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a grid of configs and aggregate a CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-features", help="dump penultimate features to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("make-dataset", help="construct synthetic or imbalanced data")
    p.add_argument("--kind", choices=["synthetic", "step", "exp"], required=True)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--ratio", type=float, default=10.0)
    p.add_argument("--n-minority", dest="n_minority", type=int, default=50)
    p.add_argument(
        "--n-test-per-class", dest="n_test_per_class", type=int, default=0
    )
    p.add_argument("--input", default=None, help="balanced CSV for step/exp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, IngestionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except SratError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
