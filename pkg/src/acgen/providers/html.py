"""HTML pruning for screenshot-derived pages.

Output is assembled from slices of the input, so it can never be longer.
"""

from __future__ import annotations

import re
from html.parser import HTMLParser

from ..errors import HtmlParseError

DROP_ELEMENTS = frozenset({"script", "style"})
DROP_ATTRIBUTES = frozenset({"style", "class"})

_VOID = frozenset({
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
})
# End tags that HTML lets authors omit.
_OPTIONAL_END = frozenset({
    "p", "li", "dt", "dd", "tr", "td", "th", "thead", "tbody", "tfoot", "option", "colgroup",
    "html", "head", "body",
})
_ATTR = re.compile(
    r"""\s+([^\s"'>/=]+)(?:\s*=\s*("[^"]*"|'[^']*'|[^\s"'=<>`]+))?"""
)


def _strip_attributes(tag_text: str) -> str:
    """Remove dropped attributes from the original start-tag source."""
    head = re.match(r"<[^\s/>]+", tag_text)
    if head is None:
        return tag_text
    kept = [tag_text[: head.end()]]
    pos = head.end()
    for m in _ATTR.finditer(tag_text, pos):
        if m.start() != pos:
            break
        name = m.group(1).lower()
        value = (m.group(2) or "").strip("\"'").lstrip()
        if name not in DROP_ATTRIBUTES and not value.lower().startswith("data:"):
            kept.append(m.group(0))
        pos = m.end()
    kept.append(tag_text[pos:])
    return "".join(kept)


class _Pruner(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=False)
        self.out: list[str] = []
        self.stack: list[str] = []
        self.skip_depth = 0

    def _emit(self, text: str) -> None:
        if not self.skip_depth:
            self.out.append(text)

    def handle_starttag(self, tag, attrs):
        raw = self.get_starttag_text() or f"<{tag}>"
        if tag in DROP_ELEMENTS:
            self.skip_depth += 1
            self.stack.append(tag)
            return
        self._emit(_strip_attributes(raw))
        if tag not in _VOID:
            self.stack.append(tag)

    def handle_startendtag(self, tag, attrs):
        if tag in DROP_ELEMENTS:
            return
        self._emit(_strip_attributes(self.get_starttag_text() or f"<{tag}/>"))

    def handle_endtag(self, tag):
        if tag in _VOID:
            return
        if tag not in self.stack:
            raise HtmlParseError(f"closing tag </{tag}> has no matching start tag")
        while self.stack:
            open_tag = self.stack.pop()
            if open_tag == tag:
                break
            if open_tag not in _OPTIONAL_END:
                raise HtmlParseError(f"<{open_tag}> closed by </{tag}>")
        if tag in DROP_ELEMENTS:
            self.skip_depth -= 1
            return
        self._emit(f"</{tag}>")

    def handle_data(self, data):
        if data.strip():
            self._emit(re.sub(r"\s+", " ", data))
        elif data and self.out and not self.out[-1].endswith((">", " ")):
            self._emit(" ")

    def handle_entityref(self, name):
        self._emit(f"&{name};")

    def handle_charref(self, name):
        self._emit(f"&#{name};")

    def handle_decl(self, decl):
        self._emit(f"<!{decl}>")

    def handle_comment(self, data):
        pass

    def handle_pi(self, data):
        pass


def prune_html(html: str) -> str:
    """Strip scripts, styles, comments, class/style attributes and data URIs.

    Tag structure, text, and attributes such as id, href, alt and aria-* are
    kept. Whitespace runs in text collapse to one space.
    """
    parser = _Pruner()
    try:
        parser.feed(html)
        parser.close()
    except HtmlParseError:
        raise
    except Exception as exc:  # HTMLParser raises assorted errors on garbage
        raise HtmlParseError(f"cannot parse HTML: {exc}") from exc
    unclosed = [t for t in parser.stack if t not in _OPTIONAL_END]
    if unclosed:
        raise HtmlParseError(f"unclosed element(s): {', '.join(unclosed)}")
    return "".join(parser.out)
