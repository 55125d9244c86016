"""Command-line entry point: ``replan <command> ...``.

Exit codes: 0 success, 1 usage, 2 input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import re
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn, Optional

from .bench import QUICK, BenchConfig, run_bench
from .errors import InputError, InvariantViolation
from .kb import KnowledgeBase, kb_stats, load_kb, merge_kb, save_kb
from .learning import LearnConfig, learn_into, learn_workload
from .matching import ReoptConfig, match_plan, reoptimize, select_matches
from .plan import format_number, serialize_plan
from .sim.catalog import Catalog, parse_catalog
from .sim.guideline import GuidelineDoc, to_xml
from .sim.optimizer import optimize
from .sim.query import Query, parse_workload

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {what} {path}: {e.strerror}") from None


def _inputs(args) -> tuple[Catalog, list[Query]]:
    catalog = parse_catalog(_read(args.catalog, "catalog"))
    workload = parse_workload(_read(args.workload, "workload"))
    for q in workload:
        q.check_catalog(catalog)
    return catalog, workload


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]", "_", name)


def _table(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_learn(args) -> int:
    catalog, workload = _inputs(args)
    kb_path = Path(args.kb)
    cfg = LearnConfig(max_joins=args.max_joins, seed=args.seed, workers=args.workers)
    res = learn_workload(workload, catalog, cfg, workload_id=Path(args.workload).stem)
    kb = learn_into(load_kb(kb_path), res.kb) if kb_path.exists() else res.kb
    save_kb(kb, kb_path)

    sidecar = Path(args.guidelines) if args.guidelines else kb_path.with_name(kb_path.name + ".guidelines")
    sidecar.mkdir(parents=True, exist_ok=True)
    for tid, t in kb.templates.items():
        (sidecar / f"{tid}.xml").write_text(to_xml(GuidelineDoc((t.guideline,))), encoding="utf-8")

    rows = [(r.template_id, r.query_id, r.n_joins, f"{r.improvement_ratio:.3f}") for r in res.report]
    text = (f"queries {len(workload)}  sub-queries {res.n_subqueries}  unique {res.n_unique_subqueries}  "
            f"new templates {len(res.kb)}  knowledge base {len(kb)}\n")
    text += _table(("template", "query", "joins", "improvement"), rows)
    report = Path(args.report) if args.report else kb_path.with_name(kb_path.name + ".report.txt")
    report.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _explain(kb: KnowledgeBase, matches) -> str:
    out = []
    for m in matches:
        out.append(f"# template {m.template_id} covers pops {sorted(m.covered_pops)}")
        out.append(kb.templates[m.template_id].compiled().explain().rstrip())
        out.append("# binding " + " ".join(f"?{k}={v.n3()}" for k, v in m.binding))
    return "\n".join(out) + ("\n" if out else "")


def cmd_reoptimize(args) -> int:
    catalog, workload = _inputs(args)
    kb = load_kb(args.kb)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ReoptConfig(max_joins=args.max_joins, verify=args.verify, seed=args.seed)
    rows = []
    for q in workload:
        plan, rep = reoptimize(q, catalog, kb, cfg)
        stem = _safe(q.id)
        (out / f"{stem}.guidelines.xml").write_text(rep.guideline_xml, encoding="utf-8")
        (out / f"{stem}.plan").write_text(serialize_plan(plan), encoding="utf-8")
        if args.explain_match:
            text = _explain(kb, rep.applied + [m for m, _ in rep.ignored] + rep.dropped)
            text += "".join(f"# ignored {m.template_id}: {why}\n" for m, why in rep.ignored)
            (out / f"{stem}.match.txt").write_text(text, encoding="utf-8")
        row = [q.id, len(rep.applied), rep.matched, format_number(rep.est_cost_before),
               format_number(rep.est_cost_after)]
        if args.verify:
            row += [format_number(round(rep.elapsed_before, 3)), format_number(round(rep.elapsed_after, 3)),
                    "yes" if rep.fell_back else "no"]
        rows.append(row)
    header = ["query", "applied", "matched", "est_cost_before", "est_cost_after"]
    if args.verify:
        header += ["elapsed_before", "elapsed_after", "fell_back"]
    text = _table(header, rows)
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_match(args) -> int:
    catalog, workload = _inputs(args)
    kb = load_kb(args.kb)
    lines = ["query\ttemplate\tcovered_pops\texpected_improvement\tselected"]
    explain = []
    for q in workload:
        plan = optimize(q, catalog)
        found = match_plan(plan, kb, args.max_joins)
        kept = {id(m) for m in select_matches(found)}
        for m in found:
            lines.append(f"{q.id}\t{m.template_id}\t{','.join(map(str, sorted(m.covered_pops)))}\t"
                         f"{m.expected_improvement:.3f}\t{'yes' if id(m) in kept else 'no'}")
        if args.explain_match and found:
            explain.append(f"## {q.id}\n" + _explain(kb, found))
    sys.stdout.write("\n".join(lines) + "\n")
    if explain:
        sys.stdout.write("\n" + "".join(explain))
    return EXIT_OK


def cmd_kb_stats(args) -> int:
    stats = kb_stats(load_kb(args.kb))
    for k, v in stats.items():
        if isinstance(v, float):
            v = f"{v:.4f}"
        elif isinstance(v, dict):
            v = " ".join(f"{a}:{b}" for a, b in v.items()) or "-"
        sys.stdout.write(f"{k}\t{v}\n")
    return EXIT_OK


def cmd_kb_merge(args) -> int:
    kbs = [load_kb(p) for p in args.inputs]
    merged = kbs[0]
    for other in kbs[1:]:
        merged = merge_kb(merged, other)
    save_kb(merged, args.out)
    sys.stdout.write(f"{len(merged)} templates written to {args.out}\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    base = QUICK if args.quick else BenchConfig()
    cfg = BenchConfig(**{**base.__dict__, "seed": args.seed, "max_joins": args.max_joins, "workers": args.workers})
    tables = run_bench(cfg, args.out)
    for row in tables["summary"]:
        sys.stdout.write(f"{row['measure']}\t{row['value']}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


GLOBAL_DEFAULTS = {"seed": 0, "workers": 1, "max_joins": 4}


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda k: argparse.SUPPRESS) if suppress else GLOBAL_DEFAULTS.get
    parser.add_argument("--seed", type=int, default=d("seed"), help="base random seed (default 0)")
    parser.add_argument("--workers", type=int, default=d("workers"), help="worker processes for learning")
    parser.add_argument("--max-joins", type=int, default=d("max_joins"),
                        help="largest sub-plan, in joins, considered by learning and matching (default 4)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="replan", description="Learn plan-rewrite templates from a workload and apply them.")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str, parent=sub) -> argparse.ArgumentParser:
        c = parent.add_parser(name, help=help_text, description=help_text)
        _globals(c, suppress=True)
        return c

    def workload_args(c):
        c.add_argument("--catalog", required=True, help="catalog file")
        c.add_argument("--workload", required=True, help="workload file")
        c.add_argument("--kb", required=True, help="knowledge-base file")

    c = command("learn", "discover templates in a workload and add them to a knowledge base")
    workload_args(c)
    c.add_argument("--guidelines", help="directory for per-template guideline XML (default <kb>.guidelines)")
    c.add_argument("--report", help="learning report path (default <kb>.report.txt)")
    c.set_defaults(func=cmd_learn)

    c = command("reoptimize", "match templates and re-optimize every workload query")
    workload_args(c)
    c.add_argument("--verify", action="store_true", help="run both plans in the simulator and keep the faster")
    c.add_argument("--explain-match", action="store_true", help="write the generated pattern queries")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_reoptimize)

    c = command("match", "list template matches without re-optimizing")
    workload_args(c)
    c.add_argument("--explain-match", action="store_true", help="print the generated pattern queries")
    c.set_defaults(func=cmd_match)

    kbp = sub.add_parser("kb", help="knowledge-base utilities")
    kbsub = kbp.add_subparsers(dest="kb_command", required=True)
    c = command("stats", "summary statistics of a knowledge base", kbsub)
    c.add_argument("kb")
    c.set_defaults(func=cmd_kb_stats)
    c = command("merge", "merge knowledge bases, coalescing identical templates", kbsub)
    c.add_argument("inputs", nargs="+")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_kb_merge)

    c = command("bench", "run the benchmark harness and write TSV tables")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--quick", action="store_true", help="small grid for a fast smoke run")
    c.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.max_joins < 1 or args.workers < 1:
        sys.stderr.write("replan: error: --max-joins and --workers must be >= 1\n")
        return EXIT_USAGE
    try:
        return args.func(args)
    except InvariantViolation as e:
        sys.stderr.write(f"replan: internal error: {e}\n")
        return EXIT_INVARIANT
    except InputError as e:
        sys.stderr.write(f"replan: {e}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
