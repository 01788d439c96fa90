"""Command-line entry point.

Subcommands mirror the workflow stages: ``synth`` (synthetic data), ``fit``
(EM parameter estimation), ``simulate`` (multi-round practice evaluation),
``verifier train|score|identify``, ``analyze-rank``, and ``serve``.

Every option resolves as: command-line flag, then ``--config`` JSON file,
then a ``TREEKT_``-prefixed environment variable, then the built-in default.
Commands that write artifacts also write a ``run_manifest.json`` naming the
exact input digests, resolved configuration, and outputs.

Exit codes: 0 success, 1 usage, 2 data validation, 3 runtime failure,
4 EM ran out of iterations without converging (parameters still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import socket
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .bank import generate_bank, load_bank, save_bank, truncate_histories
from .engine import (
    EmConfig,
    fit_em,
    load_histories,
    load_params,
    save_histories,
    save_params,
)
from .errors import DataValidationError, TreektError
from .generator import (
    DecodingConfig,
    EndpointConfig,
    RemoteQuestionSource,
    TemplateLibrary,
    TemplateQuestionSource,
)
from .simulate import SimulationConfig, run_cohort, selection_rank_report
from .synth import generate_cohort, synthetic_params, synthetic_tree
from .tree import load_tree, save_tree
from .verifier import (
    VerifierTrainConfig,
    alignment_score,
    identify_kc,
    load_verifier,
    save_verifier,
    train_verifier,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3
EXIT_NO_CONVERGENCE = 4

ENV_PREFIX = "TREEKT_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


_CASTS: dict[type, Callable[[str], Any]] = {
    bool: lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    int: int,
    float: float,
    str: str,
}


def resolve_settings(args: argparse.Namespace, spec: dict[str, tuple[Any, type]]) -> dict:
    """Merge flag, config-file, environment, and default values per option."""
    config: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        path = _require_file(config_path, "config")
        try:
            config = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise DataValidationError("config file must hold a JSON object")
    out = {}
    for key, (default, kind) in spec.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = _CASTS[kind](str(config[key])) if kind is not str else str(config[key])
        else:
            env = os.environ.get(ENV_PREFIX + key.upper())
            out[key] = _CASTS[kind](env) if env is not None else default
    return out


def write_manifest(
    out_dir: Path,
    command: str,
    settings: dict,
    inputs: dict[str, Path],
    outputs: Sequence[Path],
) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": {k: (v.value if hasattr(v, "value") else v) for k, v in settings.items()},
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(path)}
            for name, path in inputs.items()
        },
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(settings: dict) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_cut_points(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise DataValidationError(f"bad cut points {text!r}; expected e.g. 10,20,30") from None


def cmd_fit(args: argparse.Namespace) -> int:
    settings = resolve_settings(
        args,
        {
            "out": ("fit-out", str),
            "max_iters": (100, int),
            "tolerance": (1e-6, float),
            "min_prob": (0.01, float),
            "max_prob": (0.99, float),
            "seed": (0, int),
        },
    )
    tree_path = _require_file(args.tree, "tree")
    hist_path = _require_file(args.histories, "histories")
    tree = load_tree(tree_path)
    histories = load_histories(hist_path)
    result = fit_em(
        tree,
        histories,
        EmConfig(
            max_iters=settings["max_iters"],
            ll_tolerance=settings["tolerance"],
            min_prob=settings["min_prob"],
            max_prob=settings["max_prob"],
            seed=settings["seed"],
        ),
    )
    out = _out_dir(settings)
    params_path = out / "params.json"
    trace_path = out / "ll_trace.json"
    save_params(result.params, params_path)
    trace_path.write_text(json.dumps(list(result.trace)) + "\n", encoding="utf-8")
    write_manifest(
        out, "fit", settings,
        {"tree": tree_path, "histories": hist_path},
        [params_path, trace_path],
    )
    print(
        f"fit: {result.iterations} iterations, "
        f"log-likelihood {result.trace[-1]:.4f}, "
        f"{'converged' if result.converged else 'max iterations reached'}"
    )
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _question_source(settings: dict, tree):
    kind = settings["generator"]
    if kind == "none":
        return None
    if kind == "template":
        return TemplateQuestionSource(
            TemplateLibrary(tree, seed=settings["seed"]), seed=settings["seed"]
        )
    if kind == "remote":
        endpoint = EndpointConfig.from_env(
            base_url=settings["endpoint"] or None, timeout_s=settings["timeout"]
        )
        return RemoteQuestionSource(endpoint=endpoint, decoding=DecodingConfig())
    raise UsageError(f"unknown generator kind {kind!r}")


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = resolve_settings(
        args,
        {
            "out": ("simulate-out", str),
            "policy": ("oracle", str),
            "rounds": (10, int),
            "exam_size": (60, int),
            "seed": (0, int),
            "cut_points": ("10,20,30,40,50", str),
            "generator": ("none", str),
            "endpoint": ("", str),
            "timeout": (30.0, float),
            "verifier": ("", str),
            "jobs": (1, int),
        },
    )
    tree_path = _require_file(args.tree, "tree")
    params_path = _require_file(args.params, "params")
    hist_path = _require_file(args.histories, "histories")
    bank_path = _require_file(args.bank, "bank")
    tree = load_tree(tree_path)
    params = load_params(params_path)
    bank = load_bank(bank_path, tree)
    cohort = truncate_histories(
        load_histories(hist_path), _parse_cut_points(settings["cut_points"])
    )

    config = SimulationConfig(
        rounds=settings["rounds"],
        exam_size=settings["exam_size"],
        policy=settings["policy"],
        seed=settings["seed"],
    )
    question_source = None
    verifier_model = None
    if config.policy in ("generator", "generator_with_oracle_kc"):
        if settings["generator"] == "none":
            raise UsageError(
                f"policy {config.policy!r} needs --generator template or remote"
            )
        if not settings["verifier"]:
            raise UsageError(f"policy {config.policy!r} needs --verifier MODEL")
        verifier_model = load_verifier(_require_file(settings["verifier"], "verifier"))
        question_source = _question_source(settings, tree)

    report = run_cohort(
        params,
        tree,
        cohort,
        config,
        bank=bank,
        question_source=question_source,
        verifier_model=verifier_model,
        jobs=settings["jobs"],
    )
    out = _out_dir(settings)
    json_path = out / "report.json"
    csv_path = out / "report.csv"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    inputs = {
        "tree": tree_path, "params": params_path,
        "histories": hist_path, "bank": bank_path,
    }
    if settings["verifier"]:
        inputs["verifier"] = Path(settings["verifier"])
    write_manifest(out, "simulate", settings, inputs, [json_path, csv_path])
    agg = report.aggregate[config.policy]
    print(
        f"simulate[{config.policy}]: mean exam score {agg['mean']:.4f} "
        f"(std {agg['std']:.4f}, n={agg['count']})"
    )
    return EXIT_OK


def cmd_verifier_train(args: argparse.Namespace) -> int:
    settings = resolve_settings(
        args,
        {
            "out": ("verifier-out", str),
            "epochs": (70, int),
            "batch_size": (64, int),
            "learning_rate": (1e-3, float),
            "tau": (0.07, float),
            "seed": (0, int),
            "hard_negatives": (1, int),
        },
    )
    tree_path = _require_file(args.tree, "tree")
    corpus_path = _require_file(args.corpus, "corpus")
    tree = load_tree(tree_path)
    corpus = []
    for lineno, line in enumerate(
        corpus_path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            corpus.append((str(obj["kc"]), str(obj["question"])))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataValidationError(f"corpus line {lineno}: {exc}") from None
    result = train_verifier(
        corpus,
        tree,
        VerifierTrainConfig(
            epochs=settings["epochs"],
            batch_size=settings["batch_size"],
            learning_rate=settings["learning_rate"],
            tau=settings["tau"],
            seed=settings["seed"],
            hard_negatives_per_pair=settings["hard_negatives"],
        ),
    )
    out = _out_dir(settings)
    model_path = out / "verifier.json"
    trace_path = out / "loss_trace.json"
    save_verifier(result.model, model_path)
    trace_path.write_text(json.dumps(list(result.loss_trace)) + "\n", encoding="utf-8")
    write_manifest(
        out, "verifier train", settings,
        {"tree": tree_path, "corpus": corpus_path},
        [model_path, trace_path],
    )
    print(
        f"verifier train: {len(corpus)} pairs, "
        f"loss {result.loss_trace[0]:.4f} -> {result.loss_trace[-1]:.4f}"
    )
    return EXIT_OK


def _verifier_candidates(args: argparse.Namespace, tree) -> list[str]:
    if args.candidates:
        return [c.strip() for c in args.candidates.split(",") if c.strip()]
    return list(tree.leaves)


def _input_questions(args: argparse.Namespace) -> list[str]:
    questions = list(args.question or [])
    if args.questions_file:
        path = _require_file(args.questions_file, "questions")
        questions.extend(
            line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()
        )
    if not questions:
        raise UsageError("no questions given; use --question or --questions-file")
    return questions


def cmd_verifier_score(args: argparse.Namespace) -> int:
    tree = load_tree(_require_file(args.tree, "tree"))
    model = load_verifier(_require_file(args.model, "verifier model"))
    candidates = _verifier_candidates(args, tree)
    for question in _input_questions(args):
        targets = [args.kc] if args.kc else candidates
        for kc in targets:
            row = alignment_score(model, tree, question, kc, candidates)
            print(
                f"{kc}\tlogit={row.raw_logit:.6f}\tmean={row.mean:.6f}\t"
                f"std={row.std:.6f}\tscore={row.score:.6f}"
            )
    return EXIT_OK


def cmd_verifier_identify(args: argparse.Namespace) -> int:
    tree = load_tree(_require_file(args.tree, "tree"))
    model = load_verifier(_require_file(args.model, "verifier model"))
    candidates = _verifier_candidates(args, tree)
    for question in _input_questions(args):
        print(identify_kc(model, tree, question, candidates))
    return EXIT_OK


def cmd_analyze_rank(args: argparse.Namespace) -> int:
    settings = resolve_settings(
        args,
        {"out": ("rank-out", str), "cut_points": ("10,20,30,40,50", str)},
    )
    tree_path = _require_file(args.tree, "tree")
    params_path = _require_file(args.params, "params")
    hist_path = _require_file(args.histories, "histories")
    tree = load_tree(tree_path)
    params = load_params(params_path)
    cohort = truncate_histories(
        load_histories(hist_path), _parse_cut_points(settings["cut_points"])
    )
    rows = selection_rank_report(params, tree, cohort)
    out = _out_dir(settings)
    report_path = out / "rank_report.jsonl"
    report_path.write_text(
        "\n".join(json.dumps(row, sort_keys=True) for row in rows) + "\n",
        encoding="utf-8",
    )
    write_manifest(
        out, "analyze-rank", settings,
        {"tree": tree_path, "params": params_path, "histories": hist_path},
        [report_path],
    )
    print(f"analyze-rank: {len(rows)} selections written")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    settings = resolve_settings(
        args,
        {
            "out": ("synth-out", str),
            "leaves": (30, int),
            "branching": (5, int),
            "students": (100, int),
            "records": (50, int),
            "per_leaf": (3, int),
            "seed": (0, int),
            "epsilon": (0.2, float),
            "r_easy": (0.9, float),
            "r_med": (0.75, float),
            "r_hard": (0.55, float),
        },
    )
    tree = synthetic_tree(settings["leaves"], settings["branching"])
    params = synthetic_params(
        tree,
        seed=settings["seed"],
        epsilon=settings["epsilon"],
        r_easy=settings["r_easy"],
        r_med=settings["r_med"],
        r_hard=settings["r_hard"],
    )
    cohort = generate_cohort(
        tree, params, settings["students"], settings["records"], seed=settings["seed"]
    )
    bank = generate_bank(tree, per_leaf=settings["per_leaf"], seed=settings["seed"])
    out = _out_dir(settings)
    paths = {
        "tree": out / "tree.jsonl",
        "params": out / "params.json",
        "histories": out / "histories.jsonl",
        "bank": out / "bank.jsonl",
    }
    save_tree(tree, paths["tree"])
    save_params(params, paths["params"])
    save_histories(cohort, paths["histories"])
    save_bank(bank, paths["bank"])
    write_manifest(out, "synth", settings, {}, list(paths.values()))
    print(
        f"synth: {len(tree)} nodes, {settings['students']} students x "
        f"{settings['records']} records, {len(bank)} questions -> {out}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    settings = resolve_settings(
        args,
        {
            "host": ("127.0.0.1", str),
            "port": (8321, int),
            "tree_id": ("", str),
            "params_id": ("", str),
            "generator": ("none", str),
            "endpoint": ("", str),
            "timeout": (30.0, float),
            "seed": (0, int),
            "cors_origin": ("*", str),
            "event_log": ("", str),
        },
    )
    import uvicorn

    from .service import ArtifactRegistry, create_app

    tree_path = _require_file(args.tree, "tree")
    params_path = _require_file(args.params, "params")
    tree = load_tree(tree_path)
    params = load_params(params_path)
    tree_id = settings["tree_id"] or tree_path.stem
    params_id = settings["params_id"] or params_path.stem
    registry = ArtifactRegistry()
    registry.add_tree(tree_id, tree)
    registry.add_params(params_id, params)
    params.require_cover(tree)

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((settings["host"], settings["port"]))
    except OSError as exc:
        raise TreektError(
            f"cannot bind {settings['host']}:{settings['port']}: {exc}"
        ) from None
    finally:
        probe.close()

    app = create_app(
        registry,
        question_source=_question_source(settings, tree),
        cors_origins=[settings["cors_origin"]],
        event_log=settings["event_log"] or None,
    )
    print(
        f"serving tree={tree_id} params={params_id} "
        f"on http://{settings['host']}:{settings['port']}"
    )
    uvicorn.run(app, host=settings["host"], port=settings["port"], log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="treekt", description="Knowledge-tracing tutoring toolkit")
    parser.add_argument("--version", action="version", version=f"treekt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("-o", "--out", help="output directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", help="fit tracer parameters by EM")
    p.add_argument("tree")
    p.add_argument("histories")
    common(p)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--min-prob", dest="min_prob", type=float)
    p.add_argument("--max-prob", dest="max_prob", type=float)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("simulate", help="run the practice and exam protocol")
    p.add_argument("tree")
    p.add_argument("params")
    p.add_argument("histories")
    p.add_argument("bank")
    common(p)
    p.add_argument("--policy")
    p.add_argument("--rounds", type=int)
    p.add_argument("--exam-size", dest="exam_size", type=int)
    p.add_argument("--cut-points", dest="cut_points")
    p.add_argument("--generator", choices=["none", "template", "remote"])
    p.add_argument("--endpoint")
    p.add_argument("--timeout", type=float)
    p.add_argument("--verifier")
    p.add_argument("--jobs", type=int)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("verifier", help="alignment verifier workflows")
    vsub = p.add_subparsers(dest="verifier_command", required=True)

    pv = vsub.add_parser("train", help="train the alignment verifier")
    pv.add_argument("tree")
    pv.add_argument("corpus")
    common(pv)
    pv.add_argument("--epochs", type=int)
    pv.add_argument("--batch-size", dest="batch_size", type=int)
    pv.add_argument("--learning-rate", dest="learning_rate", type=float)
    pv.add_argument("--tau", type=float)
    pv.add_argument("--hard-negatives", dest="hard_negatives", type=int)
    pv.set_defaults(handler=cmd_verifier_train)

    for name, handler in (("score", cmd_verifier_score), ("identify", cmd_verifier_identify)):
        pv = vsub.add_parser(name)
        pv.add_argument("model")
        pv.add_argument("tree")
        pv.add_argument("--question", action="append")
        pv.add_argument("--questions-file", dest="questions_file")
        pv.add_argument("--candidates", help="comma-separated candidate kc ids")
        if name == "score":
            pv.add_argument("--kc", help="score only this concept")
        pv.set_defaults(handler=handler)

    p = sub.add_parser("analyze-rank", help="mastery-rank report of selections")
    p.add_argument("tree")
    p.add_argument("params")
    p.add_argument("histories")
    common(p)
    p.add_argument("--cut-points", dest="cut_points")
    p.set_defaults(handler=cmd_analyze_rank)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--leaves", type=int)
    p.add_argument("--branching", type=int)
    p.add_argument("--students", type=int)
    p.add_argument("--records", type=int)
    p.add_argument("--per-leaf", dest="per_leaf", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--r-easy", dest="r_easy", type=float)
    p.add_argument("--r-med", dest="r_med", type=float)
    p.add_argument("--r-hard", dest="r_hard", type=float)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("serve", help="run the tutoring session service")
    p.add_argument("tree")
    p.add_argument("params")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--tree-id", dest="tree_id")
    p.add_argument("--params-id", dest="params_id")
    p.add_argument("--generator", choices=["none", "template", "remote"])
    p.add_argument("--endpoint")
    p.add_argument("--timeout", type=float)
    p.add_argument("--cors-origin", dest="cors_origin")
    p.add_argument("--event-log", dest="event_log")
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TreektError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
