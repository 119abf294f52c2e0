"""Command-line entry point: ``promptlab <subcommand> ...``.

Settings resolve as flags > ``--config`` JSON file > built-in defaults.
Exit status is 0 on success, 1 on an operational error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import analysis, finetune, prompts, runner
from .backends import BackendError, DgpConfig, HttpBackend, MockBackend
from .catalog import RELATIVE_GRID, CatalogError, load_catalog

log = logging.getLogger("promptlab")


class UsageError(Exception):
    pass


@dataclasses.dataclass
class RunConfig:
    backend: str = "mock"
    base_url: Optional[str] = None
    model_id: str = "mock"
    dgp: Dict[str, object] = dataclasses.field(default_factory=dict)
    seed: int = 0
    concurrency: int = 4
    catalog: Optional[str] = None

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise UsageError("backend must be 'mock' or 'http'")
        if self.backend == "http" and not self.base_url:
            raise UsageError("--base-url is required with --backend http")

    def dgp_config(self) -> DgpConfig:
        fields = {f.name: f for f in dataclasses.fields(DgpConfig)}
        kw = {}
        for key, value in self.dgp.items():
            if key not in fields:
                raise UsageError(f"unknown DGP parameter {key!r}; known: {', '.join(fields)}")
            if key == "controlled_by":
                kw[key] = tuple(value.split("|")) if isinstance(value, str) else tuple(value)
            else:
                kw[key] = float(value)
        return DgpConfig(**kw)

    def make_backend(self, catalog):
        if self.backend == "http":
            return HttpBackend(self.base_url, max_in_flight=self.concurrency)
        return MockBackend(self.dgp_config(), self.seed, catalog)


# --------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser, backend: bool = False) -> None:
    p.add_argument("--config", help="flat JSON file of option defaults")
    p.add_argument("--catalog", help="catalog CSV (default: bundled 40-product catalog)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if backend:
        p.add_argument("--backend", choices=("mock", "http"), help="completion backend (default mock)")
        p.add_argument("--base-url", help="chat-completions server root for --backend http")
        p.add_argument("--model-id", help="model identifier sent to the backend (default mock)")
        p.add_argument("--concurrency", type=int, help="parallel cells / in-flight requests (default 4)")
        p.add_argument("--dgp", action="append", metavar="KEY=VALUE",
                       help="mock DgpConfig override, repeatable (controlled_by takes a |-separated list)")


def _products(p):
    p.add_argument("--products", help="comma-separated product ids (default: whole catalog)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptlab", description="Blinded vs unblinded LLM pricing experiments.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("catalog", help="catalog utilities")
    csub = p.add_subparsers(dest="catalog_command", metavar="ACTION")
    csub.required = True
    v = csub.add_parser("validate", help="parse a catalog CSV and summarise it")
    _common(v)

    p = sub.add_parser("run", help="run a design and append draws to a JSONL store")
    _common(p, backend=True)
    _products(p)
    p.add_argument("--strategy", required=True, help="built-in strategy id")
    p.add_argument("--system", help="take the system prompt from another strategy")
    p.add_argument("--draws", type=int, default=50, help="draws per (product, price) cell")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--design-id", default="run")
    p.add_argument("--store", default="out/store.jsonl")

    p = sub.add_parser("personas", help="generate personas, then run the temperature-0 price sweep")
    _common(p, backend=True)
    p.add_argument("--product", default="soda_carb")
    p.add_argument("--n", type=int, default=500, help="personas to generate")
    p.add_argument("--personas", help="reuse an existing persona CSV instead of generating")
    p.add_argument("--personas-out", default="out/personas.csv")
    p.add_argument("--strategy", default="persona_decide")
    p.add_argument("--store", default="out/persona_store.jsonl")
    p.add_argument("--out", default="out/persona_demand.csv", help="demand CSV")

    p = sub.add_parser("audit", help="covariance/correlation audit of a store run")
    _common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--run-id")
    p.add_argument("--raw-prices", action="store_true", help="do not divide currency answers by regular price")
    p.add_argument("--out", default="out/audit.csv")

    p = sub.add_parser("demand", help="demand curve from a store run, or the simulator's ground truth")
    _common(p, backend=True)
    _products(p)
    p.add_argument("--store")
    p.add_argument("--run-id")
    p.add_argument("--ground-truth", action="store_true", help="emit the mock's exact curve instead")
    p.add_argument("--mode", choices=("interventional", "observational"), default="interventional")
    p.add_argument("--out", default="out/demand.csv")
    p.add_argument("--aggregate-out", help="also write the product-averaged curve")
    p.add_argument("--plot", help="also write a line chart (needs matplotlib)")

    p = sub.add_parser("mae", help="mean absolute error between two demand/reference CSVs")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--exclude-zero-price", action="store_true")
    p.add_argument("--out", default="out/mae.csv")

    p = sub.add_parser("improvement", help="percent MAE reduction from unblinding")
    _common(p)
    p.add_argument("--blinded", type=float, required=True, help="MAE of the blinded strategy")
    p.add_argument("--unblinded", type=float, required=True, help="MAE of the unblinded strategy")

    p = sub.add_parser("sweep", help="sequential covariate-addition sensitivity sweep")
    _common(p, backend=True)
    _products(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--panel", help="respondent CSV with respondent_id and covariate columns")
    p.add_argument("--synthetic-panel", type=int, metavar="N", help="use N synthetic respondents instead")
    p.add_argument("--stages", help="comma-separated stage numbers (default: all 12)")
    p.add_argument("--draws", type=int, default=1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--store", default="out/sweep_store.jsonl")
    p.add_argument("--out", default="out/stages.csv")

    p = sub.add_parser("ambiguity", help="find question pairs a strategy renders identically")
    _common(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--product", default="soda_carb")
    p.add_argument("--price", default="4.99")
    p.add_argument("--out", default="out/collisions.csv")

    p = sub.add_parser("folds", help="leave-one-group-out folds")
    _common(p)
    p.add_argument("--out", default="out/folds.csv")

    p = sub.add_parser("emit-finetune", help="write a chat-format fine-tuning JSONL")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ref", help="reference CSV (labels sampled per n_obs)")
    src.add_argument("--respondents", help="CSV of product_id,relative_price,decision")
    p.add_argument("--strategy", choices=("blinded", "unblinded"), required=True)
    p.add_argument("--fold", required=True, help="validation group name or fold index")
    p.add_argument("--draws-per-cell", type=int, default=finetune.DEFAULT_DRAWS_PER_CELL)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mix", help="append observational online-purchase examples and shuffle")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--source", required=True, help="CSV of category,product,price")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-matrix", help="blinded/unblinded evaluation grid for supplied model ids")
    _common(p, backend=True)
    p.add_argument("--fold", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--model", action="append", metavar="ROW=MODEL_ID",
                   help="row key (out_of_box, tuned_blinded, tuned_unblinded) and model id; repeatable")
    p.add_argument("--draws", type=int, default=50)
    p.add_argument("--store", default="out/eval_store.jsonl")
    p.add_argument("--out", default="out/eval_matrix.csv")

    p = sub.add_parser("report", help="print bundled published results or the strategy list")
    _common(p)
    p.add_argument("what", choices=("survey", "survey-mixed", "stages", "strategies"),
                   help="survey / survey-mixed: published fine-tuning MAE grids; stages: published "
                        "covariate-sweep MAEs; strategies: built-in prompt strategies")
    p.add_argument("--out", help="also write the table to this file")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a flat JSON object")
    explicit = _explicit_dests(parser, argv)
    for key, value in data.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"config key {key!r} is not an option of this subcommand")
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def _explicit_dests(parser, argv) -> set:
    """Long options the user typed on the command line."""
    seen = set()
    for token in argv:
        if token.startswith("--"):
            seen.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return seen


def _config(args) -> RunConfig:
    dgp = {}
    for item in getattr(args, "dgp", None) or []:
        if isinstance(item, str):
            if "=" not in item:
                raise UsageError(f"--dgp expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            dgp[k.strip()] = v.strip()
        else:
            dgp.update(item)
    return RunConfig(
        backend=getattr(args, "backend", None) or "mock",
        base_url=getattr(args, "base_url", None),
        model_id=getattr(args, "model_id", None) or "mock",
        dgp=dgp,
        seed=args.seed if args.seed is not None else 0,
        concurrency=getattr(args, "concurrency", None) or 4,
        catalog=args.catalog,
    )


def _product_ids(args, catalog) -> tuple:
    if not getattr(args, "products", None):
        return tuple(e.product_id for e in catalog)
    ids = tuple(p.strip() for p in args.products.split(",") if p.strip())
    known = {e.product_id for e in catalog}
    unknown = [p for p in ids if p not in known]
    if unknown:
        raise UsageError(f"unknown product id(s): {', '.join(unknown)}")
    return ids


def _out(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _select_run(store: runner.JsonlStore, run_id: Optional[str]) -> List[runner.DrawRecord]:
    records = store.records(run_id)
    if run_id is None:
        runs = sorted({r.run_id for r in records})
        if len(runs) > 1:
            raise UsageError(f"store holds several runs; pick one with --run-id: {', '.join(runs)}")
    if not records:
        raise ValueError("no records found for the requested run")
    return records


# --------------------------------------------------------------------------
# subcommands

def cmd_catalog(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    counts = {}
    for e in catalog:
        counts[e.group] = counts.get(e.group, 0) + 1
    print(f"{len(catalog)} products OK: " + ", ".join(f"{g} {n}" for g, n in counts.items()))
    return 0


def cmd_run(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    design = runner.ExperimentDesign(
        args.design_id, args.strategy, _product_ids(args, catalog), n_draws=args.draws,
        temperature=args.temperature, seed=cfg.seed, system_strategy_id=args.system,
        model_id=cfg.model_id, backend=cfg.backend,
    )
    store = runner.JsonlStore(_out(args.store))
    summary = runner.run_experiment(design, cfg.make_backend(catalog), store, catalog, cfg.concurrency)
    print(summary.line())
    print(f"store: {args.store}")
    return 0 if summary.complete else 1


def cmd_personas(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    products = {e.product_id: e for e in catalog}
    if args.product not in products:
        raise UsageError(f"unknown product {args.product!r}")
    product = products[args.product]
    backend = cfg.make_backend(catalog)
    if args.personas:
        personas = runner.load_personas(args.personas)
    else:
        personas = runner.generate_personas(product, args.n, backend, cfg.seed, cfg.model_id)
        runner.write_personas(personas, _out(args.personas_out))
        print(f"{len(personas)} personas -> {args.personas_out}")
    store = runner.JsonlStore(_out(args.store))
    summary = runner.run_persona_sweep(product, personas, RELATIVE_GRID, args.strategy, backend, store,
                                       model_id=cfg.model_id, seed=cfg.seed, concurrency=cfg.concurrency)
    print(summary.line())
    curve = analysis.demand_curve(store.records(summary.run_id))
    curve.write_csv(_out(args.out))
    for rel, p in curve.aggregate.items():
        print(f"  {rel:+.1f}  {p:.3f}")
    print(f"demand: {args.out}")
    return 0 if summary.complete else 1


def cmd_audit(args, cfg: RunConfig) -> int:
    store = runner.JsonlStore(args.store)
    records = _select_run(store, args.run_id)
    audit = analysis.covariate_audit(records, load_catalog(cfg.catalog), normalize_prices=not args.raw_prices)
    audit.write_csv(_out(args.out))
    print(f"{audit.n} valid records; categorical fields excluded: {', '.join(audit.excluded) or 'none'}")
    for name, r in audit.price_correlation.items():
        print(f"  corr(relative_price, {name}) = {'undefined' if r is None else f'{r:+.3f}'}")
    print(f"audit: {args.out}")
    return 0


def cmd_demand(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    if args.ground_truth:
        ref = analysis.ground_truth_curve(cfg.dgp_config(), _product_ids(args, catalog), args.mode)
        ref.write_csv(_out(args.out))
        print(f"{len(ref.rows)} ground-truth cells ({args.mode}) -> {args.out}")
        return 0
    if not args.store:
        raise UsageError("demand needs --store or --ground-truth")
    curve = analysis.demand_curve(_select_run(runner.JsonlStore(args.store), args.run_id))
    curve.write_csv(_out(args.out))
    if args.aggregate_out:
        curve.write_aggregate_csv(_out(args.aggregate_out))
    if args.plot:
        analysis.plot_curves({curve.strategy_id or "demand": curve.aggregate}, _out(args.plot))
    for rel, p in curve.aggregate.items():
        print(f"  {rel:+.1f}  {p:.3f}")
    print(f"demand: {args.out}")
    return 0


def cmd_mae(args, cfg: RunConfig) -> int:
    pred, ref = analysis.load_reference(args.pred), analysis.load_reference(args.ref)
    res = analysis.mae(pred, ref, include_zero_price=not args.exclude_zero_price)
    with open(_out(args.out), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mae", "coverage", "n_cells"])
        w.writerow([repr(res.value), repr(res.coverage), res.n_cells])
    print(f"MAE {res.value:.6f}  coverage {res.coverage:.3f} ({res.n_cells} cells)")
    return 0


def cmd_improvement(args, cfg: RunConfig) -> int:
    print(f"{analysis.improvement_pct(args.blinded, args.unblinded):.2f}%")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    if bool(args.panel) == bool(args.synthetic_panel):
        raise UsageError("give exactly one of --panel or --synthetic-panel")
    panel = analysis.load_panel(args.panel) if args.panel else analysis.synthetic_panel(args.synthetic_panel, cfg.seed)
    stages = prompts.STAGES
    if args.stages:
        wanted = {int(s) for s in args.stages.split(",")}
        stages = tuple(s for s in stages if s.index in wanted)
    design = runner.ExperimentDesign("sweep", "ask_purchase", _product_ids(args, catalog), n_draws=args.draws,
                                     temperature=args.temperature, seed=cfg.seed, model_id=cfg.model_id)
    results = analysis.covariate_sweep(stages, design, cfg.make_backend(catalog), analysis.load_reference(args.ref),
                                       panel, runner.JsonlStore(_out(args.store)), catalog,
                                       concurrency=cfg.concurrency)
    analysis.write_stage_csv(results, _out(args.out))
    for r in results:
        shown = r.skipped if r.skipped else f"MAE {r.mae:.4f}"
        print(f"  stage {r.stage:2d} ({r.total_covariates:2d} covariates)  {shown}")
    print(f"stages: {args.out}")
    return 0


def cmd_ambiguity(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    strategy = prompts.builtin_strategy(args.strategy)
    questions = prompts.default_questions(strategy, args.product, args.price)
    reports = prompts.check_ambiguity(strategy, questions, catalog)
    with open(_out(args.out), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy_id", "interpretation_a", "interpretation_b", "reason", "system", "user"])
        for r in reports:
            w.writerow([strategy.strategy_id, r.question_a.interpretation, r.question_b.interpretation,
                        r.reason, r.rendered.system, r.rendered.user])
    print(f"{args.strategy}: {len(reports)} collision(s) -> {args.out}")
    return 0


def cmd_folds(args, cfg: RunConfig) -> int:
    plan = finetune.make_folds(load_catalog(cfg.catalog))
    plan.write_csv(_out(args.out))
    for f in plan.folds:
        print(f"  fold {f.index}: validate {f.validation_group} ({len(f.validation_products)} products)")
    print(f"folds: {args.out}")
    return 0


def _fold(plan, key: str):
    return plan.fold(int(key) if str(key).isdigit() else key)


def cmd_emit(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    fold = _fold(finetune.make_folds(catalog), args.fold)
    if args.ref:
        data = analysis.load_reference(args.ref)
    else:
        with open(args.respondents, newline="", encoding="utf-8") as fh:
            data = list(csv.DictReader(fh))
    counts = finetune.emit_dataset(data, args.strategy, fold, _out(args.out), catalog, cfg.seed, args.draws_per_cell)
    print(f"{counts['written']} examples written, {counts['excluded']} validation-group observations excluded")
    return 0


def cmd_mix(args, cfg: RunConfig) -> int:
    total = finetune.mix_observational(args.dataset, args.source, args.n, _out(args.out), cfg.seed)
    print(f"{total} lines -> {args.out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    catalog = load_catalog(cfg.catalog)
    fold = _fold(finetune.make_folds(catalog), args.fold)
    models = {}
    for item in args.model or [f"out_of_box={cfg.model_id}"]:
        if "=" not in item:
            raise UsageError(f"--model expects ROW=MODEL_ID, got {item!r}")
        key, model_id = item.split("=", 1)
        models[key] = model_id
    matrix = finetune.eval_matrix(models, fold, cfg.make_backend(catalog), analysis.load_reference(args.ref),
                                  n_draws=args.draws, seed=cfg.seed, store=runner.JsonlStore(_out(args.store)),
                                  catalog=catalog, concurrency=cfg.concurrency)
    matrix.write_csv(_out(args.out))
    print(finetune.format_matrix(matrix))
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    if args.what == "strategies":
        lines = [f"{s.strategy_id:<20} {s.blinding:<10} {s.expected_answer_schema}" for s in prompts.all_strategies()]
        text = "\n".join(lines)
        if args.out:
            prompts.export_strategies(_out(args.out))
    elif args.what == "stages":
        lines = [f"{'stage':>5}  {'total':>5}  {'new':>3}  {'MAE':>6}  names"]
        lines += [f"{st:>5}  {tot:>5}  {new:>3}  {m:>6}  {names}" for st, tot, new, names, m in analysis.REFERENCE_STAGE_TABLE]
        text = "\n".join(lines)
        if args.out:
            _out(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        matrix = finetune.load_published_grid(args.what.replace("-", "_"))
        text = finetune.format_matrix(matrix)
        if args.out:
            matrix.write_csv(_out(args.out))
    print(text)
    return 0


COMMANDS = {
    "catalog": cmd_catalog, "run": cmd_run, "personas": cmd_personas, "audit": cmd_audit,
    "demand": cmd_demand, "mae": cmd_mae, "improvement": cmd_improvement, "sweep": cmd_sweep,
    "ambiguity": cmd_ambiguity, "folds": cmd_folds, "emit-finetune": cmd_emit, "mix": cmd_mix,
    "eval-matrix": cmd_eval, "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"promptlab: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"promptlab: error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, prompts.PromptError) as exc:
        print(f"promptlab: error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return 2 if isinstance(exc, prompts.UnknownStrategy) else 1
    except (OSError, ValueError, RuntimeError, BackendError, CatalogError) as exc:
        print(f"promptlab: error: {exc}", file=sys.stderr)
        return 1
