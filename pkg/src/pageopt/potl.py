"""Logical page models: the POTL document tree, its parser and validator.

A POTL document nests ``layout > region > module > source``. A source body is
one of three things:

* ``apl:operator`` -- fetch content with a named fetcher, no decision;
* ``apl:map`` -- choose k of n fetched items and place them in k positions;
* ``apl:choice`` -- pick one of several alternatives.

Maps and choices are the page's degrees of freedom (DoFs). ``apl:constraints``
wrappers open a constraint scope, either at layout root or around a source body.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import DslSyntaxError, DslTypeError, MalformedDocument, SchemaViolation
from .markup import Element, parse_elements

log = logging.getLogger(__name__)

PROP_REGIONS = "number of regions"
PROP_ITEMS = "number of items"
PROP_COLUMNS = "columns"

# Misspelling used verbatim in the published example; read as <property>.
_PROPERTY_TAGS = ("property", "proprty")


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    path: str
    message: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "path": self.path, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...]

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "issues": [i.to_dict() for i in self.issues]}


@dataclass(frozen=True)
class OperatorDef:
    id: str
    handler: str
    properties: tuple[tuple[str, str], ...] = ()
    path: str = ""

    def prop(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.properties:
            if k == key:
                return v
        return default

    def to_dict(self) -> dict:
        return {"kind": "operator", "id": self.id, "handler": self.handler,
                "properties": [list(p) for p in self.properties]}


@dataclass(frozen=True)
class ConstraintDecl:
    id: str
    expression_text: str
    scope_path: str

    def to_dict(self) -> dict:
        return {"id": self.id, "expression": self.expression_text, "scope": self.scope_path}


@dataclass(frozen=True)
class MapDoF:
    id: str
    handler: str
    item_source: OperatorDef
    position_regions: tuple[RegionNode, ...] = ()
    position_count: int | None = None
    pool_size_hint: int | None = None
    columns: int | None = None
    path: str = ""

    kind = "map"

    @property
    def k(self) -> int:
        """Number of positions to fill."""
        if self.position_regions:
            return len(self.position_regions)
        return self.position_count or 0

    @property
    def position_labels(self) -> list[str | None]:
        if self.position_regions:
            return [r.label for r in self.position_regions]
        return [None] * self.k

    @property
    def position_ids(self) -> list[str]:
        return [r.position_marker for r in self.position_regions]

    def to_dict(self) -> dict:
        return {
            "kind": "map", "id": self.id, "handler": self.handler,
            "item_source": self.item_source.to_dict(),
            "positions": ([{"label": r.label, "position": r.position_marker} for r in self.position_regions]
                          if self.position_regions else self.position_count),
            "pool_size_hint": self.pool_size_hint,
            "columns": self.columns,
        }


@dataclass(frozen=True)
class Alternative:
    id: str
    body: Union[OperatorDef, MapDoF]
    path: str = ""

    @property
    def operator(self) -> OperatorDef:
        return self.body if isinstance(self.body, OperatorDef) else self.body.item_source

    def to_dict(self) -> dict:
        return {"id": self.id, "body": self.body.to_dict()}


@dataclass(frozen=True)
class ChoiceDoF:
    id: str
    alternatives: tuple[Alternative, ...]
    handler: str | None = None
    path: str = ""

    kind = "choice"

    def to_dict(self) -> dict:
        return {"kind": "choice", "id": self.id, "handler": self.handler,
                "alternatives": [a.to_dict() for a in self.alternatives]}


SourceBody = Union[OperatorDef, MapDoF, ChoiceDoF]


@dataclass(frozen=True)
class SourceDef:
    label: str
    body: SourceBody
    constraints: tuple[ConstraintDecl, ...] = ()
    scope_id: str | None = None
    path: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "scope_id": self.scope_id, "body": self.body.to_dict(),
                "constraints": [c.to_dict() for c in self.constraints]}


@dataclass(frozen=True)
class ModuleDef:
    label: str
    source: SourceDef
    renderer_label: str
    path: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "source": self.source.to_dict(), "renderer": self.renderer_label}


@dataclass(frozen=True)
class RegionNode:
    label: str
    modules: tuple[ModuleDef, ...] = ()
    position_marker: str | None = None
    path: str = ""

    def to_dict(self) -> dict:
        d: dict = {"label": self.label}
        if self.position_marker is not None:
            d["position"] = self.position_marker
        else:
            d["modules"] = [m.to_dict() for m in self.modules]
        return d


@dataclass(frozen=True)
class PageModel:
    layout_label: str
    regions: tuple[RegionNode, ...]
    source_digest: str
    constraints: tuple[ConstraintDecl, ...] = ()
    scope_id: str | None = None
    issues: tuple[Issue, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout_label,
            "digest": self.source_digest,
            "scope_id": self.scope_id,
            "constraints": [c.to_dict() for c in self.constraints],
            "regions": [r.to_dict() for r in self.regions],
        }

    def dump_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)

    def iter_sources(self) -> Iterator[tuple[RegionNode, ModuleDef, SourceDef]]:
        for region in self.regions:
            for module in region.modules:
                yield region, module, module.source

    def all_constraints(self) -> list[ConstraintDecl]:
        out = list(self.constraints)
        for _, _, source in self.iter_sources():
            out.extend(source.constraints)
        return out


@dataclass(frozen=True)
class DofDescriptor:
    """One degree of freedom in decision order, with everything needed to resolve it."""

    dof: Union[MapDoF, ChoiceDoF]
    scope_path: str
    region_label: str
    source_label: str
    constraints: tuple[ConstraintDecl, ...]
    # (choice id, alternative id) pairs on the path from layout root.
    ancestors: tuple[tuple[str, str], ...] = ()

    @property
    def id(self) -> str:
        return self.dof.id

    @property
    def kind(self) -> str:
        return self.dof.kind


def enumerate_dofs(model: PageModel) -> list[DofDescriptor]:
    """All maps and choices in document pre-order; this is the decision order."""
    out: list[DofDescriptor] = []
    for region, module, source in model.iter_sources():
        scope = tuple(model.constraints) + tuple(source.constraints)
        body = source.body
        if isinstance(body, MapDoF):
            out.append(DofDescriptor(body, body.path, region.label, source.label, scope))
        elif isinstance(body, ChoiceDoF):
            out.append(DofDescriptor(body, body.path, region.label, source.label, ()))
            for alt in body.alternatives:
                if isinstance(alt.body, MapDoF):
                    out.append(DofDescriptor(alt.body, alt.body.path, region.label, source.label,
                                             scope, ((body.id, alt.id),)))
    return out


def model_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------- parsing


class _Builder:
    def __init__(self, strict: bool):
        self.strict = strict
        self.issues: list[Issue] = []
        self.labels: dict[str, str] = {}
        self.ids: dict[str, str] = {}

    def warn(self, path: str, message: str) -> None:
        self.issues.append(Issue("warning", path, message))

    def error(self, path: str, message: str) -> None:
        if self.strict:
            raise SchemaViolation(message, path=path)
        self.issues.append(Issue("error", path, message))

    def require(self, el: Element, attr: str, path: str) -> str:
        value = el.attrs.get(attr)
        if value is None:
            raise SchemaViolation(f"<{el.tag}> requires attribute {attr!r} (line {el.line})", path=path)
        return value

    def check_attrs(self, el: Element, allowed: set[str], path: str) -> None:
        for name in el.attrs:
            if name not in allowed:
                self.warn(path, f"unknown attribute {name!r} on <{el.tag}>")

    def stray_text(self, el: Element, path: str) -> None:
        if el.text.strip():
            self.warn(path, f"ignored text inside <{el.tag}>")

    def claim_label(self, label: str, path: str) -> None:
        if label in self.labels:
            self.error(path, f"duplicate label {label!r} (first at {self.labels[label]})")
        else:
            self.labels[label] = path

    def claim_id(self, ident: str, path: str) -> None:
        if ident in self.ids:
            self.error(path, f"duplicate id {ident!r} (first at {self.ids[ident]})")
        else:
            self.ids[ident] = path

    # -- elements

    def layout(self, el: Element, outer_scope: Element | None) -> PageModel:
        label = self.require(el, "label", "/layout")
        path = f"/layout[{label}]"
        self.check_attrs(el, {"label"}, path)
        self.stray_text(el, path)
        self.claim_label(label, path)
        regions: list[RegionNode] = []
        constraints: list[ConstraintDecl] = []
        scope_id = None
        scopes = [outer_scope] if outer_scope is not None else []
        for child in el.children:
            if child.tag == "region":
                regions.append(self.region(child, path))
            elif child.tag == "apl:constraints":
                scopes.append(child)
                scope_id = child.attrs.get("id", scope_id)
                for inner in child.children:
                    if inner.tag == "region":
                        regions.append(self.region(inner, path))
                    elif inner.tag == "apl:constraint":
                        constraints.append(self.constraint(inner, path))
                    else:
                        self.warn(path, f"unknown element <{inner.tag}> in layout constraints")
            else:
                self.warn(path, f"unknown element <{child.tag}> in <layout>")
        if outer_scope is not None:
            scope_id = outer_scope.attrs.get("id", scope_id)
            for inner in outer_scope.children:
                if inner.tag == "apl:constraint":
                    constraints.append(self.constraint(inner, path))
        for s in scopes:
            if "id" in s.attrs:
                self.claim_id(s.attrs["id"], path)
        if not regions:
            self.error(path, "layout must contain at least one region")
        return PageModel(label, tuple(regions), "", tuple(constraints), scope_id)

    def region(self, el: Element, parent: str) -> RegionNode:
        label = self.require(el, "label", parent)
        path = f"{parent}/region[{label}]"
        self.check_attrs(el, {"label"}, path)
        self.stray_text(el, path)
        self.claim_label(label, path)
        modules: list[ModuleDef] = []
        marker = None
        for child in el.children:
            if child.tag == "module":
                modules.append(self.module(child, path))
            elif child.tag == "apl:position":
                pid = self.require(child, "id", path)
                self.claim_id(pid, f"{path}/apl:position[{pid}]")
                if marker is not None:
                    self.error(path, "region declares more than one position")
                marker = pid
            else:
                self.warn(path, f"unknown element <{child.tag}> in <region>")
        if marker is not None and modules:
            self.error(path, "a position region cannot contain modules")
        return RegionNode(label, tuple(modules), marker, path)

    def module(self, el: Element, parent: str) -> ModuleDef:
        label = self.require(el, "label", parent)
        path = f"{parent}/module[{label}]"
        self.check_attrs(el, {"label"}, path)
        self.stray_text(el, path)
        self.claim_label(label, path)
        source = None
        renderer = None
        for child in el.children:
            if child.tag == "source":
                if source is not None:
                    self.error(path, "module has more than one <source>")
                    continue
                source = self.source(child, path)
            elif child.tag == "renderer":
                renderer = self.require(child, "label", path)
                self.check_attrs(child, {"label"}, path)
            else:
                self.warn(path, f"unknown element <{child.tag}> in <module>")
        if source is None:
            raise SchemaViolation("module requires a <source>", path=path)
        if renderer is None:
            self.error(path, "module requires a <renderer>")
            renderer = ""
        return ModuleDef(label, source, renderer, path)

    def source(self, el: Element, parent: str) -> SourceDef:
        label = self.require(el, "label", parent)
        path = f"{parent}/source[{label}]"
        self.check_attrs(el, {"label"}, path)
        self.stray_text(el, path)
        self.claim_label(label, path)
        bodies: list = []
        constraints: list[ConstraintDecl] = []
        scope_id = None

        def visit(children: list[Element], where: str) -> None:
            for child in children:
                if child.tag == "apl:operator":
                    bodies.append(self.operator(child, path))
                elif child.tag == "apl:map":
                    bodies.append(self.map(child, path))
                elif child.tag == "apl:choice":
                    bodies.append(self.choice(child, path))
                elif child.tag == "apl:constraint":
                    constraints.append(self.constraint(child, path))
                else:
                    self.warn(path, f"unknown element <{child.tag}> in {where}")

        for child in el.children:
            if child.tag == "apl:constraints":
                if scope_id is not None:
                    self.error(path, "source has more than one constraint scope")
                scope_id = child.attrs.get("id", "")
                if scope_id:
                    self.claim_id(scope_id, f"{path}/apl:constraints[{scope_id}]")
                self.stray_text(child, path)
                for grand in child.children:
                    if grand.tag == "apl:constraints":
                        self.error(path, "nested constraint scopes below source level are not supported")
                visit([g for g in child.children if g.tag != "apl:constraints"], "<apl:constraints>")
            else:
                visit([child], "<source>")
        if len(bodies) != 1:
            raise SchemaViolation(f"source must have exactly one operator/map/choice body, found {len(bodies)}",
                                  path=path)
        return SourceDef(label, bodies[0], tuple(constraints), scope_id, path)

    def properties(self, el: Element, path: str) -> list[tuple[str, str]]:
        props: list[tuple[str, str]] = []
        seen: set[str] = set()
        for child in el.children:
            if child.tag not in _PROPERTY_TAGS:
                continue
            if child.tag != "property":
                self.warn(path, f"<{child.tag}> read as <property>")
            key = self.require(child, "key", path)
            value = self.require(child, "value", path)
            if key in seen:
                self.error(path, f"duplicate property key {key!r}")
                continue
            seen.add(key)
            props.append((key, value))
        return props

    def operator(self, el: Element, parent: str) -> OperatorDef:
        ident = self.require(el, "id", parent)
        path = f"{parent}/apl:operator[{ident}]"
        handler = el.attrs.get("handler", "")
        self.check_attrs(el, {"id", "handler"}, path)
        self.stray_text(el, path)
        self.claim_id(ident, path)
        for child in el.children:
            if child.tag not in _PROPERTY_TAGS:
                self.warn(path, f"unknown element <{child.tag}> in <apl:operator>")
        if not handler:
            self.error(path, "operator handler must be non-empty")
        return OperatorDef(ident, handler, tuple(self.properties(el, path)), path)

    def map(self, el: Element, parent: str) -> MapDoF:
        ident = self.require(el, "id", parent)
        path = f"{parent}/apl:map[{ident}]"
        handler = el.attrs.get("handler", "")
        self.check_attrs(el, {"id", "handler"}, path)
        self.stray_text(el, path)
        self.claim_id(ident, path)
        operators: list[OperatorDef] = []
        positions: list[RegionNode] = []
        for child in el.children:
            if child.tag == "apl:operator":
                operators.append(self.operator(child, path))
            elif child.tag == "region":
                region = self.region(child, path)
                if region.position_marker is None:
                    self.error(region.path, "regions inside a map must declare <apl:position>")
                positions.append(region)
            elif child.tag not in _PROPERTY_TAGS:
                self.warn(path, f"unknown element <{child.tag}> in <apl:map>")
        if len(operators) != 1:
            raise SchemaViolation(f"map needs exactly one item-source operator, found {len(operators)}", path=path)
        op = operators[0]
        props = dict(op.properties)
        props.update(self.properties(el, path))
        count = _int_prop(props, PROP_REGIONS, path)
        hint = _int_prop(props, PROP_ITEMS, path)
        columns = _int_prop(props, PROP_COLUMNS, path)
        if positions and count is not None:
            self.error(path, "explicit positions and 'number of regions' are mutually exclusive")
        if columns is not None and columns < 1:
            self.error(path, "columns must be a positive integer")
        return MapDoF(ident, handler, op, tuple(positions), None if positions else (count or 0),
                      hint, columns, path)

    def choice(self, el: Element, parent: str) -> ChoiceDoF:
        ident = self.require(el, "id", parent)
        path = f"{parent}/apl:choice[{ident}]"
        self.check_attrs(el, {"id", "handler"}, path)
        self.stray_text(el, path)
        self.claim_id(ident, path)
        alts: list[Alternative] = []
        for child in el.children:
            if child.tag != "apl:alternative":
                self.warn(path, f"unknown element <{child.tag}> in <apl:choice>")
                continue
            aid = self.require(child, "id", path)
            apath = f"{path}/apl:alternative[{aid}]"
            self.check_attrs(child, {"id"}, apath)
            self.claim_id(aid, apath)
            bodies = []
            for grand in child.children:
                if grand.tag == "apl:operator":
                    bodies.append(self.operator(grand, apath))
                elif grand.tag == "apl:map":
                    bodies.append(self.map(grand, apath))
                else:
                    self.warn(apath, f"unknown element <{grand.tag}> in <apl:alternative>")
            if len(bodies) != 1:
                raise SchemaViolation("alternative needs exactly one operator or map", path=apath)
            alts.append(Alternative(aid, bodies[0], apath))
        if len(alts) < 2:
            self.error(path, f"choice needs at least 2 alternatives, found {len(alts)}")
        return ChoiceDoF(ident, tuple(alts), el.attrs.get("handler") or None, path)

    def constraint(self, el: Element, scope_path: str) -> ConstraintDecl:
        ident = self.require(el, "id", scope_path)
        self.check_attrs(el, {"id"}, scope_path)
        self.claim_id(ident, f"{scope_path}/apl:constraint[{ident}]")
        return ConstraintDecl(ident, el.text.strip(), scope_path)


def _int_prop(props: dict[str, str], key: str, path: str) -> int | None:
    if key not in props:
        return None
    try:
        return int(props[key].strip())
    except ValueError:
        raise SchemaViolation(f"property {key!r} must be an integer, got {props[key]!r}", path=path) from None


def parse_potl(text: str, *, strict: bool = True) -> PageModel:
    """Parse a POTL document into a :class:`PageModel`.

    With ``strict=False`` recoverable schema violations (duplicate ids,
    too few alternatives, ...) are kept as error issues on the model instead
    of raising, so a validator can report all of them at once.
    """
    root = parse_elements(text)
    builder = _Builder(strict)
    outer = None
    if root.tag == "apl:constraints":
        layouts = [c for c in root.children if c.tag == "layout"]
        if len(layouts) != 1:
            raise SchemaViolation("constraint wrapper must contain exactly one <layout>", path="/")
        outer, root = root, layouts[0]
    if root.tag != "layout":
        raise SchemaViolation(f"root element must be <layout>, got <{root.tag}>", path="/")
    model = builder.layout(root, outer)
    for issue in builder.issues:
        if issue.severity == "warning":
            log.debug("%s: %s", issue.path, issue.message)
    return PageModel(model.layout_label, model.regions, model_digest(text), model.constraints,
                     model.scope_id, tuple(builder.issues))


# --------------------------------------------------------------------------- validation


def validate_model(model: PageModel) -> ValidationReport:
    """Check a parsed model and collect every finding (never stops at the first)."""
    from .dsl import compile_constraint

    issues: list[Issue] = list(model.issues)
    labels: dict[str, str] = {}
    ids: dict[str, str] = {}
    already = {(i.path, i.message.split(" (first")[0]) for i in issues}

    def err(path: str, message: str) -> None:
        key = (path, message.split(" (first")[0])
        if key not in already:
            issues.append(Issue("error", path, message))
            already.add(key)

    def label(value: str, path: str) -> None:
        if value in labels:
            err(path, f"duplicate label {value!r} (first at {labels[value]})")
        else:
            labels[value] = path

    def ident(value: str, path: str) -> None:
        if value in ids:
            err(path, f"duplicate id {value!r} (first at {ids[value]})")
        else:
            ids[value] = path

    def operator(op: OperatorDef) -> None:
        ident(op.id, op.path)
        if not op.handler:
            err(op.path, "operator handler must be non-empty")
        keys = [k for k, _ in op.properties]
        if len(keys) != len(set(keys)):
            err(op.path, "duplicate property keys")

    def map_dof(m: MapDoF) -> None:
        ident(m.id, m.path)
        if not m.handler:
            err(m.path, "map handler must be non-empty")
        operator(m.item_source)
        if m.position_regions and m.position_count:
            err(m.path, "explicit positions and 'number of regions' are mutually exclusive")
        if m.k < 1:
            err(m.path, "positions must be ≥ 1")
        for r in m.position_regions:
            label(r.label, r.path)
            if r.position_marker is None:
                err(r.path, "regions inside a map must declare <apl:position>")
            else:
                ident(r.position_marker, r.path)
        if m.columns is not None and m.columns < 1:
            err(m.path, "columns must be a positive integer")
        if m.pool_size_hint is not None and m.pool_size_hint < m.k:
            issues.append(Issue("warning", m.path, f"pool hint {m.pool_size_hint} smaller than {m.k} positions"))

    if not model.regions:
        err(f"/layout[{model.layout_label}]", "layout must contain at least one region")
    label(model.layout_label, f"/layout[{model.layout_label}]")
    for region in model.regions:
        label(region.label, region.path)
        if region.position_marker is not None and region.modules:
            err(region.path, "a position region cannot contain modules")
        for module in region.modules:
            label(module.label, module.path)
            if not module.renderer_label:
                err(module.path, "renderer label must be non-empty")
            source = module.source
            label(source.label, source.path)
            body = source.body
            if isinstance(body, OperatorDef):
                operator(body)
            elif isinstance(body, MapDoF):
                map_dof(body)
            else:
                ident(body.id, body.path)
                if len(body.alternatives) < 2:
                    err(body.path, f"choice needs at least 2 alternatives, found {len(body.alternatives)}")
                for alt in body.alternatives:
                    ident(alt.id, alt.path)
                    if isinstance(alt.body, MapDoF):
                        map_dof(alt.body)
                    else:
                        operator(alt.body)

    for decl in model.all_constraints():
        ident(decl.id, f"{decl.scope_path}/apl:constraint[{decl.id}]")
        try:
            compile_constraint(decl.expression_text)
        except (DslSyntaxError, DslTypeError) as exc:
            err(f"{decl.scope_path}/apl:constraint[{decl.id}]", f"constraint does not compile: {exc}")
    return ValidationReport(tuple(issues))


def load_potl(path, *, strict: bool = True) -> PageModel:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise MalformedDocument(f"not UTF-8: {exc}", path=str(path)) from None
    return parse_potl(text, strict=strict)
