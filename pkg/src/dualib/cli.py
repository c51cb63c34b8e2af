"""Command-line entry point: run, resume, solve, inspect, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import DualibError
from .model import Config, canonical_json, load_config, load_libraries
from .providers.embedding import EmbeddingBank

log = logging.getLogger("dualib")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

DEFAULTS_HELP = """\
config file (JSON object; every key optional, unknown keys rejected):
  iterations=3                passes over the dataset
  candidates_per_question=4   programs sampled per question
  retrieval_k_max=3           demonstrations retrieved per prompt
  sim_threshold=0.8           cosine floor for retrieval and clustering
  quality_threshold=8.5       minimum judge rating for admission
  cluster_min_size=4          smallest cluster sent to the analyst
  potential_threshold=9.0     abstraction potential needed to draft a tool
  abstraction_interval=1      abstraction pass when |E| mod n == 0 after an admission
  dedup_interval=1            deduplication pass when |E| mod n == 0 after an admission
  exec_success_min=1.0        validation stage 1: share of rewrites that must execute
  correctness_min=0.85        validation stage 2: share judged correct
  dedup_sim_threshold=0.95    similarity needed to merge a duplicate group
  max_retries=2               tool drafting attempts
  rewrite_retries=2           rewrite attempts per example during validation
  merge_retries=2             merged-tool drafting attempts
  seed=42                     ordering RNG and provider seed
  ordering=random             random | curriculum | dataset
  temperatures                judges 0.0, every other role 1.0

provider keys are read from the environment only (DUALIB_API_KEY by default).
"""


def output_schema(verb: str) -> dict:
    """The JSON schema a verb's ``--json`` output conforms to."""
    from importlib import resources

    full = json.loads(resources.files("dualib").joinpath("schemas/cli_output.schema.json").read_text("utf-8"))
    key = "run" if verb == "resume" else verb
    return {"$schema": full["$schema"], "$defs": full["$defs"], "$ref": f"#/$defs/{key}"}


def _print(args, data, human: str):
    if args.json:
        sys.stdout.write(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False, default=str) + "\n")
    else:
        sys.stdout.write(human.rstrip("\n") + "\n")


def _config(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else Config()
    changes = {}
    if getattr(args, "ordering", None):
        changes["ordering"] = args.ordering
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _providers(args, scenes):
    from .pipeline import http_providers, scripted_providers

    if args.scripted:
        script = None if args.scripted == "desk" else args.scripted
        return scripted_providers(scenes, script)
    if args.provider:
        try:
            block = json.loads(Path(args.provider).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DualibError(f"cannot read provider file {args.provider}: {exc}") from None
        return http_providers(block)
    raise DualibError("choose a provider: --scripted <script|desk> or --provider <file>")


def cmd_run(args) -> int:
    from .pipeline import run
    from .scene import load_dataset, load_shipped

    ds = load_dataset(args.dataset) if args.dataset else load_shipped()
    cfg = _config(args)
    res = run(ds, cfg, _providers(args, ds.scenes), args.out, max_steps=args.max_steps, workers=args.workers)
    if res.complete:
        _write_reports(args.out)
    counts = res.libs.counts()
    data = {"out": str(res.out_dir), "complete": res.complete, "steps": res.libs.step_counter, **counts}
    status = "complete" if res.complete else "paused"
    _print(args, data, f"{status}: {counts['examples']} examples, {counts['created']} tools created, "
                       f"{counts['active']} active; outputs in {res.out_dir}")
    return EXIT_OK


def cmd_resume(args) -> int:
    from .pipeline import resume

    cfg = load_config(args.config) if args.config else None
    res = resume(args.checkpoint, config=cfg, max_steps=args.max_steps, workers=args.workers)
    if res.complete:
        _write_reports(res.out_dir)
    counts = res.libs.counts()
    data = {"out": str(res.out_dir), "complete": res.complete, "steps": res.libs.step_counter, **counts}
    _print(args, data, f"{'complete' if res.complete else 'paused'}: {counts['examples']} examples, "
                       f"{counts['created']} tools created, {counts['active']} active")
    return EXIT_OK


def _write_reports(out) -> dict:
    from .evaluation import report_for_run, write_report

    rep = report_for_run(out)
    write_report(rep, out)
    return rep


def cmd_solve(args) -> int:
    from .evaluation import score
    from .scene import load_dataset, load_scene, oracle_answer
    from .solver import solve_question

    libs = load_libraries(args.libraries)
    cfg = _config(args)
    if args.dataset:
        ds = load_dataset(args.dataset)
        items = [(q.id, q.text, ds.scene_for(q), q) for q in ds.questions]
        scenes = ds.scenes
    else:
        if not (args.question and args.scene):
            raise DualibError("solve needs --question and --scene, or --dataset")
        scene = load_scene(args.scene)
        items = [("query", args.question, scene, None)]
        scenes = {scene.id: scene}
    providers = _providers(args, scenes)
    bank = EmbeddingBank(providers.embedder)
    rows, preds, truths = [], {}, {}
    for qid, text, scene, q in items:
        res = solve_question(libs, qid, text, scene, providers.chat, bank, cfg, tag="solve", admit=False)
        best = res.candidates.best
        rows.append({"question_id": qid, "question": text, "answer": res.answer,
                     "program": best.source if best else None,
                     "tools_used": list(best.tools_used) if best else [],
                     "quality": best.quality if best else None})
        if q is not None:
            preds[qid] = res.answer
            truths[qid] = oracle_answer(scene, q)
    data: dict = {"answers": rows}
    lines = [f"{r['question_id']}: {r['answer']!r}  [{', '.join(r['tools_used']) or 'no tools'}]" for r in rows]
    if truths:
        card = score(preds, truths)
        data["score"] = {"overall": card.overall, "by_type": card.by_type,
                         "exact_count": sum(r.exact for r in card.rows), "n": len(card.rows)}
        lines.append(f"exact: {data['score']['exact_count']}/{len(card.rows)}")
    _print(args, data, "\n".join(lines))
    return EXIT_OK


def cmd_inspect(args) -> int:
    libs = load_libraries(args.libraries)
    if args.tool:
        t = libs.tools.get(args.tool)
        if t is None:
            raise DualibError(f"no tool named {args.tool!r}")
        data = t.to_json()
        state = f"deprecated ({t.deprecation_reason})" if t.deprecated else "active"
        human = f"{t.signature}  level {t.level}, {state}\n{t.docstring}\n{t.body}"
    elif args.example:
        e = libs.examples.get(args.example)
        if e is None:
            raise DualibError(f"no example with id {args.example!r}")
        data = e.to_json()
        human = (f"{e.id} [{e.status.value}] quality {e.quality}\n{e.question}\nresult: {e.result!r}\n"
                 f"tools: {', '.join(e.tools_used)}\n{e.program}")
    else:
        counts = libs.counts()
        tools = sorted(libs.tools.values(), key=lambda t: (t.level, t.name))
        data = {"counts": counts, "step_counter": libs.step_counter,
                "tools": [{"name": t.name, "level": t.level, "deprecated": t.deprecated} for t in tools],
                "examples": sorted(libs.examples)}
        lines = [f"{counts['examples']} examples, {counts['created']} learned tools ({counts['active']} active)"]
        for t in tools:
            lines.append(f"  L{t.level} {t.signature}{'  [deprecated]' if t.deprecated else ''}")
        human = "\n".join(lines)
    _print(args, data, human)
    return EXIT_OK


def cmd_report(args) -> int:
    from .evaluation import report_for_run, write_report

    rep = report_for_run(args.out)
    rdir = write_report(rep, args.out)
    summary = {"reports": str(rdir), "counts": rep["counts"], "usage": rep["usage"]["fractions"],
               "ccn_library": rep["ccn_library"], "scores": rep.get("scores", {}).get("overall"),
               "gaps": rep["gaps"]}
    lines = [f"reports written to {rdir}"]
    for it, s in sorted(rep["ccn_library"].items()):
        lines.append(f"  iteration {it}: median CCN {s['median']} over {s['n']} programs")
    for b, f in rep["usage"]["fractions"].items():
        lines.append(f"  {b}: {f:.1%}" if f is not None else f"  {b}: n/a")
    if rep.get("scores"):
        lines.append(f"  library accuracy (primary metric): {rep['scores']['overall']['primary']:.3f}")
    for g in rep["gaps"]:
        lines.append(f"  gap: {g}")
    _print(args, json.loads(canonical_json(summary)), "\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualib", description="Grow a tool library from solved spatial questions.",
                                epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--json", action="store_true", help="print machine-readable JSON instead of tables")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", metavar="VERB")

    def providers(sp):
        sp.add_argument("--scripted", metavar="SCRIPT",
                        help="offline replies from a script file, or 'desk' for the built-in desk policy")
        sp.add_argument("--provider", metavar="FILE", help="HTTP provider block (JSON: base_url, model, ...)")

    r = sub.add_parser("run", help="process a dataset for T iterations", epilog=DEFAULTS_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("--dataset", help="manifest path (default: the shipped synthetic set)")
    r.add_argument("--config", help="config JSON file (default: built-in defaults)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--ordering", choices=["random", "curriculum", "dataset"], help="question order (default random)")
    r.add_argument("--seed", type=int, help="seed (default 42)")
    r.add_argument("--max-steps", type=int, help="pause after this many questions")
    r.add_argument("--workers", type=int, default=1, help="parallel candidate generation (default 1)")
    providers(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("resume", help="continue a run from its checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", help="refuse to resume unless this config matches the run's")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_resume)

    v = sub.add_parser("solve", help="answer questions with built libraries, without learning")
    v.add_argument("--question")
    v.add_argument("--scene", help="scene fixture JSON")
    v.add_argument("--dataset", help="solve and score every question of a manifest")
    v.add_argument("--libraries", required=True)
    v.add_argument("--config")
    providers(v)
    v.set_defaults(func=cmd_solve)

    i = sub.add_parser("inspect", help="show the libraries, one tool, or one example")
    i.add_argument("--libraries", required=True)
    g = i.add_mutually_exclusive_group()
    g.add_argument("--tool")
    g.add_argument("--example")
    i.set_defaults(func=cmd_inspect)

    o = sub.add_parser("report", help="write metric and trace tables for a run directory")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("dualib: error: a verb is required\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DualibError as exc:
        sys.stderr.write(f"dualib: {exc}\n")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
