"""Command-line entry points.

    fairperturb generate  --config run.yaml --out runs/x      # stages A-D
    fairperturb perturb   --config run.yaml --out runs/x      # stages E-H
    fairperturb evaluate  --config run.yaml --out runs/x
    fairperturb stats     --predictions clip=p1.jsonl --predictions flava=p2.jsonl --out runs/x
    fairperturb report    --report report.json --out runs/x
    fairperturb review    --manifest m.jsonl --fraction 0.1667 --out runs/x
    fairperturb review    --annotations reviews.csv --out runs/x

Exit codes: 0 success, 2 configuration error, 3 adapter error, 4 data
validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Mapping

import yaml

from .adapters import DEMO_MOCK_CONFIG, AdapterError, import_backend, mock_adapters_from_config
from .adapters.base import PipelineAdapters
from .adapters.mock import MockGenerativeScorer, MockZeroShotClassifier
from .evaluation import (
    evaluate_sets,
    fairness_report,
    predictions_from_similarities,
    read_jsonl,
    read_predictions,
    set_standard_deviations,
    FairnessInput,
    write_predictions,
)
from .groups import DEFAULT_OCCUPATIONS, load_occupations, occupations_from_mapping
from .pipeline import DatasetPipeline, PipelineConfig, StageError, format_yield_table, yield_report
from .records import Manifest, ValidationError
from .report import comparison_table, regression_table, render_report, write_figures
from .review import (
    ReviewFormatError,
    aggregate_review,
    format_review_table,
    occupation_lookup,
    read_annotations,
    sample_for_review,
)
from .stats import (
    compare_models,
    error_analysis_sample,
    misclass_ratios,
    regress_predictions,
    top_misclassified_label,
)
from .store import ImageStore

logger = logging.getLogger("fairperturb")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ADAPTER = 3
EXIT_DATA = 4

PIPELINE_ADAPTERS = ("generator", "vqa", "detector", "segmenter", "inpainter", "race_classifier")


class ConfigError(Exception):
    pass


# -- configuration -------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    data["_base_dir"] = str(Path(path).resolve().parent)
    return data


def _resolve(config: Mapping, ref: str) -> Path:
    p = Path(ref)
    if not p.is_absolute() and "_base_dir" in config:
        p = Path(config["_base_dir"]) / p
    return p


def _load_mapping(config: Mapping, value) -> dict:
    if isinstance(value, str):
        with open(_resolve(config, value), encoding="utf-8") as fh:
            return yaml.safe_load(fh) or {}
    return dict(value or {})


def pipeline_config(config: Mapping, args) -> PipelineConfig:
    raw = _load_mapping(config, config.get("pipeline", {}))
    if "occupations" in config:
        occ = config["occupations"]
        raw["occupations"] = (load_occupations(_resolve(config, occ)) if isinstance(occ, str)
                              else occupations_from_mapping(occ))
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    try:
        cfg = PipelineConfig.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"pipeline config: {exc}") from exc
    if getattr(args, "occupation", None):
        wanted = set(args.occupation)
        cfg.occupations = [o for o in cfg.occupations if o.name in wanted]
        if not cfg.occupations:
            raise ConfigError(f"--occupation matched none of the configured occupations: {sorted(wanted)}")
    return cfg


def _bind(config: Mapping, binding: Mapping, store: ImageStore | None = None):
    kind = binding.get("kind")
    if kind == "import":
        if "target" not in binding:
            raise ConfigError("import binding needs a 'target' of the form 'module:Class'")
        return import_backend(binding["target"], binding.get("options"))
    raise ConfigError(f"unsupported adapter kind {kind!r}")


def pipeline_adapters(config: Mapping, store: ImageStore) -> PipelineAdapters:
    """Bind the pipeline adapters.

    ``adapters.pipeline: {kind: mock, config: <mapping or file>}`` binds all six
    mocks (without ``config``, the demo answer tables); individual entries ``adapters.<name>: {kind: import, target, options}``
    override them.
    """
    bindings = config.get("adapters")
    if not bindings:
        raise ConfigError("missing config key 'adapters'")
    adapters = None
    if "pipeline" in bindings:
        spec = bindings["pipeline"]
        if spec.get("kind") != "mock":
            raise ConfigError("adapters.pipeline only supports kind 'mock'; bind real backends per interface")
        mocks = _load_mapping(config, spec["config"]) if "config" in spec else DEMO_MOCK_CONFIG
        adapters = mock_adapters_from_config(mocks, store)
    chosen = {}
    for name in PIPELINE_ADAPTERS:
        if name in bindings:
            chosen[name] = _bind(config, bindings[name], store)
        elif adapters is not None:
            chosen[name] = getattr(adapters, name)
        else:
            raise ConfigError(f"adapter {name!r} is not bound (missing config key adapters.{name})")
    return PipelineAdapters(**chosen)


def _clock(args):
    if getattr(args, "timestamp", None):
        fixed = args.timestamp
        return lambda: fixed
    return None


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_root(config: Mapping, out: Path) -> Path:
    return _resolve(config, config["dataset_root"]) if "dataset_root" in config else out / "dataset"


# -- commands --------------------------------------------------------------------

def cmd_generate(args) -> int:
    config = load_config(args.config)
    out = _out(args)
    cfg = pipeline_config(config, args)
    store = ImageStore(_dataset_root(config, out))
    pipeline = DatasetPipeline(cfg, pipeline_adapters(config, store), store, clock=_clock(args))
    manifest = pipeline.build_base_images()
    manifest.canonicalized().write(out / "manifest.base.jsonl")
    (out / "yield_base.txt").write_text(format_yield_table(manifest) + "\n", encoding="utf-8")
    print(f"wrote {out / 'manifest.base.jsonl'} ({sum(r.selected for r in manifest.base_images)} base images selected)")
    return EXIT_OK


def cmd_perturb(args) -> int:
    config = load_config(args.config)
    out = _out(args)
    cfg = pipeline_config(config, args)
    source = Path(args.manifest) if args.manifest else out / "manifest.base.jsonl"
    base = Manifest.read(source)
    if base.pipeline_config_hash and base.pipeline_config_hash != cfg.hash():
        logger.warning("base manifest was produced with a different pipeline config")
    store = ImageStore(_dataset_root(config, out))
    pipeline = DatasetPipeline(cfg, pipeline_adapters(config, store), store, clock=_clock(args))
    manifest = pipeline.build_sets(base)
    manifest.write(out / "manifest.jsonl")
    (out / "yield_report.json").write_text(json.dumps(yield_report(manifest), indent=2) + "\n", encoding="utf-8")
    (out / "yield_report.txt").write_text(format_yield_table(manifest) + "\n", encoding="utf-8")
    print(f"wrote {out / 'manifest.jsonl'} ({len(manifest.sampled_sets)} sampled sets)")
    return EXIT_OK


def _parse_pairs(values) -> dict[str, str]:
    out = {}
    for v in values or []:
        name, sep, path = v.partition("=")
        if not sep:
            raise ConfigError(f"expected NAME=PATH, got {v!r}")
        out[name] = path
    return out


def _eval_settings(config: Mapping, args) -> dict:
    ev = dict(config.get("evaluation", {}))
    if args.label_set:
        ev["label_set"] = args.label_set
    if args.temperature is not None:
        ev["temperature"] = args.temperature
    ev.setdefault("label_set", "difficult")
    ev.setdefault("temperature", 1.0)
    if ev["label_set"] not in ("base", "difficult"):
        raise ConfigError(f"label_set must be 'base' or 'difficult', got {ev['label_set']!r}")
    if not ev["temperature"] > 0:
        raise ConfigError("temperature must be positive")
    return ev


def _model_classifier(config: Mapping, model: Mapping):
    binding = model.get("adapter")
    if binding is None:
        raise ConfigError(f"model {model.get('name')!r} needs 'similarities', 'predictions' or 'adapter'")
    if binding.get("kind") == "mock":
        if model.get("scorer") == "lens":
            return MockGenerativeScorer(**binding.get("options", {}))
        return MockZeroShotClassifier(**binding.get("options", {}))
    return _bind(config, binding)


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    out = _out(args)
    ev = _eval_settings(config, args)
    occupations = DEFAULT_OCCUPATIONS
    if "occupations" in config or "pipeline" in config:
        occupations = pipeline_config(config, args).occupations
    models = list(ev.get("models", []))
    for name, path in _parse_pairs(args.predictions).items():
        models.append({"name": name, "predictions": path})
    for name, path in _parse_pairs(args.similarities).items():
        models.append({"name": name, "similarities": path})
    if not models:
        raise ConfigError("no models to evaluate (evaluation.models, --predictions or --similarities)")

    manifest = None
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    reports = []
    set_stds = {}
    wanted = set(args.occupation or [])
    for model in models:
        name = model["name"]
        if "predictions" in model:
            preds = read_predictions(_resolve(config, model["predictions"]))
        elif "similarities" in model:
            rows = read_jsonl(_resolve(config, model["similarities"]))
            true_labels = {o.name: o.true_label for o in occupations}
            preds = predictions_from_similarities(rows, ev["temperature"], model=name, true_labels=true_labels)
        else:
            if manifest is None:
                source = args.manifest or config.get("manifest") or out / "manifest.jsonl"
                manifest = Manifest.read(_resolve(config, str(source)))
            classifier = _model_classifier(config, model)
            preds = evaluate_sets(manifest, occupations, classifier, label_set=ev["label_set"],
                                  temperature=ev["temperature"], model=name, scorer=model.get("scorer", "zero_shot"))
        if wanted:
            preds = [p for p in preds if p.occupation in wanted]
        if not preds:
            raise ValidationError(name, "predictions", "no predictions to evaluate")
        write_predictions(preds, pred_dir / f"{name}.jsonl")
        reports.append(fairness_report(preds, model=name).to_dict())
        set_stds[name] = [float(s) for s in set_standard_deviations(FairnessInput.from_predictions(preds))]

    report = {"label_set": ev["label_set"], "temperature": ev["temperature"], "models": reports}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    (out / "set_stds.json").write_text(json.dumps(set_stds) + "\n", encoding="utf-8")
    (out / "report.md").write_text(render_report(report), encoding="utf-8")
    write_figures(report, out / "figures")
    print(render_report(report))
    return EXIT_OK


def cmd_stats(args) -> int:
    config = load_config(args.config)
    out = _out(args)
    alpha = args.alpha
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    predictions = {name: read_predictions(path) for name, path in _parse_pairs(args.predictions).items()}
    if args.set_stds:
        with open(args.set_stds, encoding="utf-8") as fh:
            set_stds = json.load(fh)
    else:
        set_stds = {name: [float(s) for s in set_standard_deviations(FairnessInput.from_predictions(p))]
                    for name, p in predictions.items()}
    if len(set_stds) < 2 and not predictions:
        raise ConfigError("stats needs per-set stds or predictions for at least one model")

    result: dict[str, Any] = {"alpha": alpha}
    md = ["# Statistics", ""]
    if len(set_stds) >= 2:
        comparison = compare_models(set_stds, alpha=alpha)
        result["comparisons"] = [
            {"model_a": c.model_a, "model_b": c.model_b, "chi2": c.test.chi2, "p_value": c.test.p_value,
             "adjusted_p": c.adjusted_p, "reject": c.reject, "fairer": c.fairer,
             "grand_median": c.test.grand_median, "contingency": c.test.contingency.tolist()}
            for c in comparison.comparisons
        ]
        result["m"] = comparison.m
        result["ordering"] = comparison.ordering
        md += [f"## Pairwise Mood's median tests (Bonferroni, m={comparison.m}, alpha={alpha})", "",
               comparison_table(result["comparisons"]), ""]

    result["models"] = {}
    for name, preds in predictions.items():
        entry: dict[str, Any] = {}
        try:
            entry["regression"] = regress_predictions(preds).to_dict()
            md += ["## Correctness on perceived group (LPM, clustered by set)", "",
                   regression_table(name, entry["regression"]), ""]
        except ValueError as exc:
            entry["regression_error"] = str(exc)
        entry["misclassification"] = {}
        for occ in sorted({p.occupation for p in preds}):
            top = top_misclassified_label(preds, occ)
            occ_entry: dict[str, Any] = {"top_misclassified_label": top}
            if top is not None:
                table = misclass_ratios([p for p in preds if p.occupation == occ], top)
                occ_entry["relative_rates_pct"] = {g.canonical_name: r for g, r in table.relative_rates.items()}
            entry["misclassification"][occ] = occ_entry
        entry["error_analysis_sample"] = {g.canonical_name: ids for g, ids in
                                          error_analysis_sample(preds, args.error_samples, seed).items()}
        result["models"][name] = entry

    (out / "stats.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    (out / "stats.md").write_text("\n".join(md), encoding="utf-8")
    print("\n".join(md))
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out(args)
    try:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read report {args.report}: {exc}") from exc
    if "models" not in report:
        raise ValidationError(args.report, "models", "report file needs a 'models' list")
    text = render_report(report)
    (out / "report.md").write_text(text, encoding="utf-8")
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    write_figures(report, out / "figures")
    print(text)
    return EXIT_OK


def cmd_review(args) -> int:
    out = _out(args)
    seed = args.seed if args.seed is not None else 0
    manifest = Manifest.read(args.manifest) if args.manifest else None
    if args.annotations:
        rows = read_annotations(args.annotations)
        scores = aggregate_review(rows, occupation_lookup(manifest) if manifest else None)
        payload = {
            "overall": vars(scores["overall"]),
            "per_occupation": {o: vars(s) for o, s in scores["per_occupation"].items()},
        }
        (out / "review.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        table = format_review_table(scores)
        (out / "review.md").write_text(table + "\n", encoding="utf-8")
        print(table)
        return EXIT_OK
    if manifest is None:
        raise ConfigError("review needs --annotations or --manifest")
    refs = sample_for_review(manifest, args.fraction, seed)
    (out / "review_sample.txt").write_text("".join(r + "\n" for r in refs), encoding="utf-8")
    print(f"sampled {len(refs)} images for review")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairperturb", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, labels=False):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--occupation", action="append", help="restrict to an occupation (repeatable)")
        p.add_argument("--out", required=True)
        if labels:
            p.add_argument("--label-set", choices=("base", "difficult"))
            p.add_argument("--temperature", type=float)

    p = sub.add_parser("generate", help="generate and filter base images")
    common(p)
    p.add_argument("--timestamp", help="fixed timestamp for every record (reproducible bytes)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("perturb", help="mask, inpaint, filter and sample perturbation sets")
    common(p)
    p.add_argument("--manifest", help="base manifest (default: OUT/manifest.base.jsonl)")
    p.add_argument("--timestamp")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("evaluate", help="classify dataset images and compute the fairness metric")
    common(p, labels=True)
    p.add_argument("--manifest")
    p.add_argument("--predictions", action="append", metavar="MODEL=PATH")
    p.add_argument("--similarities", action="append", metavar="MODEL=PATH")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="pairwise median tests, clustered regressions, misclassification ratios")
    common(p)
    p.add_argument("--predictions", action="append", metavar="MODEL=PATH")
    p.add_argument("--set-stds", help="JSON {model: [per-set std, ...]}")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--error-samples", type=int, default=10)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="render tables and figures from a report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("review", help="sample images for review or aggregate review answers")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--annotations")
    p.add_argument("--fraction", type=float, default=4000 / 24000)
    p.set_defaults(func=cmd_review)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdapterError as exc:
        print(f"adapter error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except StageError as exc:
        print(f"pipeline error [{args.command}] {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValidationError, ReviewFormatError) as exc:
        print(f"validation error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error [{args.command}]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
