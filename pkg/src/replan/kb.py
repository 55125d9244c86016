"""File-backed knowledge base of templates, stored as sorted triples."""

from __future__ import annotations

import json
import os
import statistics
import tempfile
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import InputError
from .rdf import POP_NS, IRI, Literal, Triple, TripleGraph, format_triple, parse_triple_line
from .sim.guideline import GuidelineDoc, parse_guidelines, to_xml
from .template import Provenance, Template, bounds_from_graph, coalesce

KB_VERSION = 1
KB_NS = "http://replan/kb/"
KB_PROP = "http://replan/kb/property/"
HEADER = "# replan-kb"

P_RATIO = IRI(KB_PROP + "improvementRatio")
P_GUIDELINE = IRI(KB_PROP + "guideline")
P_WORKLOAD = IRI(KB_PROP + "workloadId")
P_QUERY = IRI(KB_PROP + "queryId")
P_LEARNED = IRI(KB_PROP + "learnedAt")
META_PREDICATES = (P_RATIO, P_GUIDELINE, P_WORKLOAD, P_QUERY, P_LEARNED)


class KBFormatError(InputError):
    pass


@dataclass
class KBMeta:
    version: int = KB_VERSION
    created: str = ""
    provenance: list[str] = field(default_factory=list)


@dataclass
class KnowledgeBase:
    templates: dict[str, Template] = field(default_factory=dict)
    meta: KBMeta = field(default_factory=KBMeta)

    @classmethod
    def from_templates(cls, templates: Iterable[Template], created: str = "",
                       provenance: Iterable[str] = ()) -> KnowledgeBase:
        kb = cls(meta=KBMeta(KB_VERSION, created, list(provenance)))
        for t in templates:
            if t.template_id in kb.templates:
                raise InputError(f"duplicate template id {t.template_id}")
            kb.templates[t.template_id] = t
        kb.templates = dict(sorted(kb.templates.items()))
        return kb

    def __len__(self) -> int:
        return len(self.templates)

    def same_content(self, other: KnowledgeBase) -> bool:
        """Equal up to template ids and provenance."""
        a = sorted(self.templates.values(), key=_content_key)
        b = sorted(other.templates.values(), key=_content_key)
        return len(a) == len(b) and all(x.same_content(y) for x, y in zip(a, b))


def _content_key(t: Template) -> str:
    return "\n".join(sorted(format_triple(x) for x in t.pattern_graph)) + to_xml(GuidelineDoc((t.guideline,)))


# ---------------------------------------------------------------------------
# serialization


def _template_triples(t: Template) -> list[Triple]:
    base = f"{KB_NS}{t.template_id}"
    ns = base + "/pop/"

    def move(term):
        if isinstance(term, IRI) and term.value.startswith(POP_NS):
            return IRI(ns + term.value[len(POP_NS):])
        return term

    out = [Triple(move(x.s), x.p, move(x.o)) for x in t.pattern_graph]
    subject = IRI(base)
    out += [
        Triple(subject, P_RATIO, Literal(float(t.improvement_ratio))),
        Triple(subject, P_GUIDELINE, Literal(to_xml(GuidelineDoc((t.guideline,))))),
        Triple(subject, P_WORKLOAD, Literal(t.provenance.workload_id)),
        Triple(subject, P_QUERY, Literal(t.provenance.query_id)),
        Triple(subject, P_LEARNED, Literal(t.provenance.timestamp)),
    ]
    return out


def dumps_kb(kb: KnowledgeBase) -> str:
    lines = [f"{HEADER} version={kb.meta.version}", f"# created {json.dumps(kb.meta.created)}"]
    lines += [f"# provenance {json.dumps(p)}" for p in kb.meta.provenance]
    body = sorted(format_triple(x) for t in kb.templates.values() for x in _template_triples(t))
    return "\n".join(lines + body) + "\n"


def loads_kb(text: str) -> KnowledgeBase:
    lines = text.split("\n")
    if not lines or not lines[0].startswith(HEADER + " version="):
        raise KBFormatError("line 1: missing knowledge-base header")
    try:
        version = int(lines[0][len(HEADER + " version="):])
    except ValueError:
        raise KBFormatError("line 1: malformed version") from None
    if version != KB_VERSION:
        raise KBFormatError(f"line 1: unsupported knowledge-base version {version} (expected {KB_VERSION})")
    meta = KBMeta(version)
    per_template: dict[str, list[Triple]] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            try:
                if line.startswith("# created "):
                    meta.created = json.loads(line[len("# created "):])
                elif line.startswith("# provenance "):
                    meta.provenance.append(json.loads(line[len("# provenance "):]))
            except json.JSONDecodeError:
                raise KBFormatError(f"line {lineno}: malformed header comment") from None
            continue
        t = parse_triple_line(line, lineno)
        if not isinstance(t.s, IRI) or not t.s.value.startswith(KB_NS):
            raise KBFormatError(f"line {lineno}: subject outside the knowledge-base namespace")
        tid = t.s.value[len(KB_NS):].split("/", 1)[0]
        per_template.setdefault(tid, []).append(t)
    templates = [_decode_template(tid, triples) for tid, triples in per_template.items()]
    return KnowledgeBase.from_templates(templates, meta.created, meta.provenance)


def _decode_template(tid: str, triples: list[Triple]) -> Template:
    base = f"{KB_NS}{tid}"
    ns = base + "/pop/"
    subject = IRI(base)
    meta: dict[IRI, object] = {}
    g = TripleGraph()

    def back(term):
        if isinstance(term, IRI) and term.value.startswith(ns):
            return IRI(POP_NS + term.value[len(ns):])
        return term

    for t in triples:
        if t.s == subject:
            if t.p not in META_PREDICATES:
                raise KBFormatError(f"template {tid}: unknown property {t.p.n3()}")
            meta[t.p] = t.o.value
        else:
            g.add(Triple(back(t.s), t.p, back(t.o)))
    missing = [p.value for p in META_PREDICATES if p not in meta]
    if missing:
        raise KBFormatError(f"template {tid}: missing {', '.join(missing)}")
    doc = parse_guidelines(str(meta[P_GUIDELINE]))
    if len(doc.roots) != 1:
        raise KBFormatError(f"template {tid}: guideline must have exactly one root")
    tmpl = Template(
        template_id=tid,
        pattern_graph=g,
        bounds=dict(sorted(bounds_from_graph(g).items())),
        guideline=doc.roots[0],
        improvement_ratio=float(meta[P_RATIO]),
        provenance=Provenance(str(meta[P_WORKLOAD]), str(meta[P_QUERY]), str(meta[P_LEARNED])),
    )
    tmpl.check()
    return tmpl


def save_kb(kb: KnowledgeBase, path: Union[str, Path]) -> None:
    """Write atomically: a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_kb(kb))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_kb(path: Union[str, Path]) -> KnowledgeBase:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read knowledge base {path}: {e.strerror}") from None
    return loads_kb(text)


# ---------------------------------------------------------------------------
# merge and stats


def merge_kb(a: KnowledgeBase, b: KnowledgeBase) -> KnowledgeBase:
    """Union; structurally identical templates coalesce (union bounds, max ratio)."""
    by_key: dict[tuple, Template] = {}
    for t in sorted([*a.templates.values(), *b.templates.values()], key=lambda t: t.template_id):
        key = t.structure_key()
        by_key[key] = coalesce(by_key[key], t) if key in by_key else t
    created = min((c for c in (a.meta.created, b.meta.created) if c), default="")
    provenance = sorted(set(a.meta.provenance) | set(b.meta.provenance))
    return KnowledgeBase.from_templates(by_key.values(), created, provenance)


def kb_stats(kb: KnowledgeBase) -> dict[str, object]:
    ratios = [t.improvement_ratio for t in kb.templates.values()]
    by_joins: dict[int, int] = {}
    for t in kb.templates.values():
        by_joins[t.n_joins] = by_joins.get(t.n_joins, 0) + 1
    return {
        "templates": len(kb),
        "by_joins": dict(sorted(by_joins.items())),
        "ratio_min": min(ratios) if ratios else None,
        "ratio_median": statistics.median(ratios) if ratios else None,
        "ratio_max": max(ratios) if ratios else None,
        "bounded_properties": sum(len(t.bounds) for t in kb.templates.values()),
        "created": kb.meta.created,
    }
