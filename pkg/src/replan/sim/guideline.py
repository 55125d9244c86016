"""Optimizer guideline documents: a tree of join/access directives serialized as XML."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional

from ..errors import InputError
from ..plan import Plan, PopType

JOIN_TAGS = ("HSJOIN", "MSJOIN", "NLJOIN")
ACCESS_TAGS = ("TBSCAN", "IXSCAN")
ROOT_TAG = "OPTGUIDELINES"


class GuidelineError(InputError):
    pass


@dataclass(frozen=True)
class GuidelineNode:
    tag: str
    tabid: Optional[str] = None
    table: Optional[str] = None
    index: Optional[str] = None
    children: tuple[GuidelineNode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if self.tag in JOIN_TAGS:
            if len(self.children) != 2:
                raise GuidelineError(f"{self.tag} needs exactly two children, got {len(self.children)}")
            if self.tabid or self.table or self.index:
                raise GuidelineError(f"{self.tag} takes no attributes")
        elif self.tag in ACCESS_TAGS:
            if self.children:
                raise GuidelineError(f"{self.tag} cannot have children")
            if (self.tabid is None) == (self.table is None):
                raise GuidelineError(f"{self.tag} needs exactly one of TABID or TABLE")
            if self.index is not None and self.tag != "IXSCAN":
                raise GuidelineError("INDEX is only valid on IXSCAN")
        else:
            raise GuidelineError(f"unknown guideline tag {self.tag!r}")

    @property
    def is_join(self) -> bool:
        return self.tag in JOIN_TAGS

    def leaves(self) -> list[GuidelineNode]:
        if not self.is_join:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def joins(self) -> list[GuidelineNode]:
        if not self.is_join:
            return []
        return [self] + [j for c in self.children for j in c.joins()]


@dataclass(frozen=True)
class GuidelineDoc:
    roots: tuple[GuidelineNode, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "roots", tuple(self.roots))

    def to_xml(self) -> str:
        return to_xml(self)


def _attrs(node: GuidelineNode) -> str:
    parts = []
    if node.tabid is not None:
        parts.append(f"TABID='{_esc(node.tabid)}'")
    if node.table is not None:
        parts.append(f"TABLE='{_esc(node.table)}'")
    if node.index is not None:
        parts.append(f"INDEX='{_esc(node.index)}'")
    return (" " + " ".join(parts)) if parts else ""


def _esc(v: str) -> str:
    return v.replace("&", "&amp;").replace("<", "&lt;").replace("'", "&apos;")


def _emit(node: GuidelineNode, depth: int, out: list[str]) -> None:
    pad = "  " * depth
    if node.is_join:
        out.append(f"{pad}<{node.tag}>")
        for c in node.children:
            _emit(c, depth + 1, out)
        out.append(f"{pad}</{node.tag}>")
    else:
        out.append(f"{pad}<{node.tag}{_attrs(node)}/>")


def to_xml(doc: GuidelineDoc) -> str:
    if not doc.roots:
        return f"<{ROOT_TAG}></{ROOT_TAG}>\n"
    out = [f"<{ROOT_TAG}>"]
    for r in doc.roots:
        _emit(r, 1, out)
    out.append(f"</{ROOT_TAG}>")
    return "\n".join(out) + "\n"


def _from_element(el: ET.Element) -> GuidelineNode:
    unknown = set(el.attrib) - {"TABID", "TABLE", "INDEX"}
    if unknown:
        raise GuidelineError(f"unknown attribute(s) {sorted(unknown)} on {el.tag}")
    return GuidelineNode(
        tag=el.tag,
        tabid=el.get("TABID"),
        table=el.get("TABLE"),
        index=el.get("INDEX"),
        children=tuple(_from_element(c) for c in el),
    )


def parse_guidelines(text: str) -> GuidelineDoc:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise GuidelineError(f"malformed guideline XML: {e}") from None
    if root.tag != ROOT_TAG:
        raise GuidelineError(f"expected <{ROOT_TAG}> root, got <{root.tag}>")
    return GuidelineDoc(tuple(_from_element(c) for c in root))


def relabel(node: GuidelineNode, tabids: dict[str, str], indexes: dict[str, str]) -> GuidelineNode:
    """Substitute TABID and INDEX values; labels missing from the maps raise KeyError."""
    if node.is_join:
        return GuidelineNode(node.tag, children=tuple(relabel(c, tabids, indexes) for c in node.children))
    return GuidelineNode(
        node.tag,
        tabid=tabids[node.tabid] if node.tabid is not None else None,
        table=node.table,
        index=indexes[node.index] if node.index is not None else None,
    )


def guideline_from_plan(plan: Plan, start: Optional[int] = None,
                        keep_index: Optional[set[str]] = None) -> GuidelineNode:
    """Directive tree reproducing the join/access structure below ``start``.

    SORT, FETCH and RETURN are transparent. ``keep_index`` limits which index
    names survive on IXSCAN leaves; an IXSCAN whose index is dropped still asks
    for index access but lets the optimizer choose which one.
    """
    pop = plan[plan.root if start is None else start]
    while not pop.pop_type.is_join and not pop.pop_type.is_scan:
        pop = plan[pop.inputs[0]]
    if pop.pop_type.is_join:
        return GuidelineNode(pop.pop_type.value, children=tuple(
            guideline_from_plan(plan, c, keep_index) for c in pop.inputs))
    index = pop.index_name
    if index is not None and keep_index is not None and index not in keep_index:
        index = None
    return GuidelineNode(pop.pop_type.value, tabid=pop.table_ref.instance, index=index)
