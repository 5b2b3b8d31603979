"""Tiny element tree over expat, shared by the POTL and layout parsers.

Namespace processing is disabled on purpose: ``apl:map`` is kept as a plain
tag name so documents that never declare the ``apl`` prefix still parse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.parsers import expat

from .errors import MalformedDocument


@dataclass
class Element:
    tag: str
    attrs: dict[str, str]
    line: int
    children: list[Element] = field(default_factory=list)
    text_parts: list[str] = field(default_factory=list)

    @property
    def text(self) -> str:
        return "".join(self.text_parts)


def parse_elements(text: str) -> Element:
    """Parse *text* into an :class:`Element` tree, rejecting DTDs and entities."""
    parser = expat.ParserCreate()
    stack: list[Element] = []
    root: list[Element] = []

    def start(tag, attrs):
        el = Element(tag, dict(attrs), parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(el)
        else:
            root.append(el)
        stack.append(el)

    def end(tag):
        stack.pop()

    def chars(data):
        if stack:
            stack[-1].text_parts.append(data)

    def doctype(*_args):
        raise MalformedDocument("DTDs are not supported", path=f"line {parser.CurrentLineNumber}")

    def entity(*_args):
        raise MalformedDocument("entity declarations are not supported", path=f"line {parser.CurrentLineNumber}")

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    parser.StartDoctypeDeclHandler = doctype
    parser.EntityDeclHandler = entity
    try:
        parser.Parse(text.encode("utf-8") if isinstance(text, str) else text, True)
    except expat.ExpatError as exc:
        raise MalformedDocument(expat.errors.messages[exc.code], path=f"line {exc.lineno}, column {exc.offset}") from None
    return root[0]
