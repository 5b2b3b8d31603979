"""Labelled HTML layout skeletons and region binding.

The skeleton is a tag-balanced subset of HTML (``html``, ``body``, ``table``,
``tr``, ``td``) where some nodes carry a ``label``. Page-model regions bind to
labelled nodes by exact name after an optional alias table is applied.
"""

from __future__ import annotations

import html as _html
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .errors import DuplicateLabel, MalformedDocument, MissingFragment
from .markup import Element, parse_elements

KINDS = {"html", "body", "table", "tr", "td"}
_ROW_KIND = {"tr": "row", "td": "cell"}


@dataclass(frozen=True)
class LayoutNode:
    kind: str  # html | body | table | row | cell
    label: str | None = None
    children: tuple[LayoutNode, ...] = ()

    @property
    def tag(self) -> str:
        return {"row": "tr", "cell": "td"}.get(self.kind, self.kind)


@dataclass(frozen=True)
class LayoutTree:
    root: LayoutNode

    def walk(self) -> Iterator[tuple[tuple[int, ...], LayoutNode]]:
        stack: list[tuple[tuple[int, ...], LayoutNode]] = [((), self.root)]
        while stack:
            path, node = stack.pop()
            yield path, node
            for i in reversed(range(len(node.children))):
                stack.append((path + (i,), node.children[i]))

    def labeled(self) -> list[tuple[tuple[int, ...], LayoutNode]]:
        return [(p, n) for p, n in self.walk() if n.label is not None]

    def labels(self) -> list[str]:
        return [n.label for _, n in self.labeled()]

    def leaf_slots(self) -> list[str]:
        """Labelled nodes with no labelled descendant: the placement slots."""
        def has_labeled_descendant(node: LayoutNode) -> bool:
            return any(c.label is not None or has_labeled_descendant(c) for c in node.children)

        return [n.label for _, n in self.labeled() if not has_labeled_descendant(n)]

    def node_at(self, path: tuple[int, ...]) -> LayoutNode:
        node = self.root
        for i in path:
            node = node.children[i]
        return node


@dataclass(frozen=True)
class BindingMap:
    entries: dict[str, tuple[int, ...]] = field(default_factory=dict)
    slot_labels: dict[str, str] = field(default_factory=dict)  # region -> layout label
    unbound_regions: tuple[str, ...] = ()
    unfilled_slots: tuple[str, ...] = ()


def _convert(el: Element) -> LayoutNode:
    if el.tag not in KINDS:
        raise MalformedDocument(f"unsupported element <{el.tag}>", path=f"line {el.line}")
    if el.text.strip():
        raise MalformedDocument(f"text content inside <{el.tag}> is not supported", path=f"line {el.line}")
    kind = _ROW_KIND.get(el.tag, el.tag)
    return LayoutNode(kind, el.attrs.get("label"), tuple(_convert(c) for c in el.children))


def parse_layout_html(text: str) -> LayoutTree:
    tree = LayoutTree(_convert(parse_elements(text)))
    seen: set[str] = set()
    for label in tree.labels():
        if label in seen:
            raise DuplicateLabel(f"duplicate layout label {label!r}")
        seen.add(label)
    return tree


def serialize_layout(tree: LayoutTree, fill: Mapping[tuple[int, ...], tuple[str, str]] | None = None,
                     indent: str = " ") -> str:
    """Serialise the skeleton; *fill* maps node paths to (token, inner html)."""
    fill = fill or {}
    out: list[str] = []

    def emit(node: LayoutNode, path: tuple[int, ...], depth: int) -> None:
        pad = indent * depth
        attrs = f' label="{_html.escape(node.label)}"' if node.label is not None else ""
        filled = fill.get(path)
        if filled is not None:
            token, inner = filled
            out.append(f'{pad}<{node.tag}{attrs} data-token="{token}">{inner}')
        else:
            out.append(f"{pad}<{node.tag}{attrs}>")
        for i, child in enumerate(node.children):
            emit(child, path + (i,), depth + 1)
        if filled is not None or not node.children:
            out[-1] += f"</{node.tag}>"
        else:
            out.append(f"{pad}</{node.tag}>")

    emit(tree.root, (), 0)
    return "\n".join(out) + "\n"


def bind_regions(layout: LayoutTree, model, alias: Mapping[str, str] | None = None) -> BindingMap:
    """Bind each top-level region of *model* to the layout node of the same
    (aliased) label. Mismatches are reported, never fatal."""
    alias = alias or {}
    paths = {n.label: p for p, n in layout.labeled()}
    entries: dict[str, tuple[int, ...]] = {}
    slot_labels: dict[str, str] = {}
    unbound: list[str] = []
    for region in model.regions:
        target = alias.get(region.label, region.label)
        if target in paths:
            entries[region.label] = paths[target]
            slot_labels[region.label] = target
        else:
            unbound.append(region.label)
    bound_labels = set(slot_labels.values())
    unfilled = [s for s in layout.leaf_slots() if s not in bound_labels]
    return BindingMap(entries, slot_labels, tuple(unbound), tuple(unfilled))


def render_html(layout: LayoutTree, binding: BindingMap, instance) -> str:
    """Fill every bound slot with its region's fragment and instrumentation token."""
    by_region = {r.label: r for r in instance.regions}
    fill: dict[tuple[int, ...], tuple[str, str]] = {}
    for region, path in binding.entries.items():
        rendered = by_region.get(region)
        if rendered is None:
            raise MissingFragment(f"instance has no output for bound region {region!r}")
        fill[path] = (rendered.token, rendered.fragment)
    return serialize_layout(layout, fill)
