"""Cascade classifier model: parse the standard cascade XML schema into an
immutable stump-tree model.

Only the "new style" schema is supported (stages of weak classifiers given as
internalNodes/leafValues plus a shared features table). Old-style files with
inline tree nodes, multi-node trees and tilted features are rejected with
located errors. The parser is hand-rolled for exactly this element subset so
every error can carry a byte offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .imageio import Rect


class CascadeFormatError(ValueError):
    """Structurally invalid cascade XML. `offset` locates the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class WeightedRect:
    rect: Rect
    weight: float


@dataclass(frozen=True)
class HaarFeature:
    """2 or 3 weighted rectangles inside the model window."""

    rects: tuple[WeightedRect, ...]


@dataclass(frozen=True)
class WeakStump:
    """Depth-1 tree: votes left_leaf when value < threshold * window std."""

    feature: int
    threshold: float
    left_leaf: float
    right_leaf: float


@dataclass(frozen=True)
class Stage:
    threshold: float
    stumps: tuple[WeakStump, ...]


@dataclass(frozen=True)
class CascadeModel:
    window_w: int
    window_h: int
    features: tuple[HaarFeature, ...]
    stages: tuple[Stage, ...]

    @property
    def stump_count(self) -> int:
        return sum(len(s.stumps) for s in self.stages)


# ---------------------------------------------------------------------------
# Minimal XML reader (elements, text, ignored attributes; no entities)

@dataclass
class _Element:
    name: str
    offset: int
    text: str = ""
    children: list["_Element"] = field(default_factory=list)

    def child(self, name: str) -> "_Element | None":
        for c in self.children:
            if c.name == name:
                return c
        return None

    def require(self, name: str) -> "_Element":
        c = self.child(name)
        if c is None:
            raise CascadeFormatError(f"missing element <{name}>", self.offset)
        return c


def _read_elements(buf: bytes) -> _Element:
    text = buf.decode("latin-1")  # 1:1 byte<->char so offsets stay byte offsets
    pos, n = 0, len(text)
    root: _Element | None = None
    stack: list[_Element] = []

    def fail(msg: str, at: int):
        raise CascadeFormatError(msg, at)

    while pos < n:
        lt = text.find("<", pos)
        if lt < 0:
            if text[pos:].strip():
                fail("text outside any element", pos)
            break
        if text[pos:lt].strip():
            if not stack:
                fail("text outside any element", pos)
            stack[-1].text += text[pos:lt]
        if text.startswith("<!--", lt):
            end = text.find("-->", lt)
            if end < 0:
                fail("unterminated comment", lt)
            pos = end + 3
            continue
        if text.startswith("<?", lt):
            end = text.find("?>", lt)
            if end < 0:
                fail("unterminated processing instruction", lt)
            pos = end + 2
            continue
        gt = text.find(">", lt)
        if gt < 0:
            fail("unterminated tag", lt)
        tag = text[lt + 1 : gt]
        pos = gt + 1
        if tag.startswith("/"):
            name = tag[1:].strip()
            if not stack:
                fail(f"unexpected closing tag </{name}>", lt)
            if stack[-1].name != name:
                fail(f"mismatched closing tag </{name}>, open is <{stack[-1].name}>", lt)
            stack.pop()
            continue
        self_closing = tag.endswith("/")
        if self_closing:
            tag = tag[:-1]
        name = tag.split(None, 1)[0] if tag.split() else ""
        if not name:
            fail("empty tag", lt)
        elem = _Element(name=name, offset=lt)
        if stack:
            stack[-1].children.append(elem)
        elif root is None:
            root = elem
        else:
            fail("multiple root elements", lt)
        if not self_closing:
            stack.append(elem)
    if stack:
        fail(f"unclosed element <{stack[-1].name}>", stack[-1].offset)
    if root is None:
        fail("no root element", 0)
    return root


# ---------------------------------------------------------------------------
# Schema walk

def _numbers(elem: _Element, what: str) -> list[str]:
    toks = elem.text.split()
    if not toks:
        raise CascadeFormatError(f"empty {what}", elem.offset)
    return toks


def _to_int(tok: str, elem: _Element, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CascadeFormatError(f"non-integer {what} {tok!r}", elem.offset) from None


def _to_float(tok: str, elem: _Element, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CascadeFormatError(f"non-numeric {what} {tok!r}", elem.offset) from None


def _find_model_element(root: _Element) -> _Element:
    if root.child("stages") is not None:
        return root
    for c in root.children:
        if c.child("stages") is not None:
            return c
    raise CascadeFormatError("missing element <stages>", root.offset)


def _parse_window(model: _Element) -> tuple[int, int]:
    size = model.child("size")
    if size is not None:
        toks = _numbers(size, "size")
        if len(toks) != 2:
            raise CascadeFormatError("size must hold two integers", size.offset)
        return _to_int(toks[0], size, "width"), _to_int(toks[1], size, "height")
    width = model.child("width")
    height = model.child("height")
    if width is None or height is None:
        raise CascadeFormatError("missing window size (<size> or <width>/<height>)",
                                 model.offset)
    return (_to_int(_numbers(width, "width")[0], width, "width"),
            _to_int(_numbers(height, "height")[0], height, "height"))


def _parse_stump(elem: _Element) -> WeakStump:
    if elem.child("trees") is not None or elem.child("feature") is not None:
        raise CascadeFormatError("old-format cascade entries are not supported",
                                 elem.offset)
    nodes = elem.require("internalNodes")
    leaves = elem.require("leafValues")
    node_toks = _numbers(nodes, "internalNodes")
    if len(node_toks) != 4:
        raise CascadeFormatError(
            f"tree with {len(node_toks) // 4} internal nodes, only depth-1 stumps "
            "are supported", nodes.offset)
    leaf_toks = _numbers(leaves, "leafValues")
    if len(leaf_toks) != 2:
        raise CascadeFormatError(
            f"expected 2 leaf values, got {len(leaf_toks)}", leaves.offset)
    feature = _to_int(node_toks[2], nodes, "feature index")
    threshold = _to_float(node_toks[3], nodes, "node threshold")
    return WeakStump(
        feature=feature,
        threshold=threshold,
        left_leaf=_to_float(leaf_toks[0], leaves, "leaf value"),
        right_leaf=_to_float(leaf_toks[1], leaves, "leaf value"),
    )


def _parse_feature(elem: _Element, window_w: int, window_h: int) -> HaarFeature:
    tilted = elem.child("tilted")
    if tilted is not None and tilted.text.split() and tilted.text.split()[0] != "0":
        raise CascadeFormatError("tilted (45 degree) features are not supported",
                                 tilted.offset)
    rects_elem = elem.require("rects")
    rects = []
    for r in rects_elem.children:
        toks = _numbers(r, "rect")
        if len(toks) != 5:
            raise CascadeFormatError(
                f"rect needs 'x y w h weight', got {len(toks)} fields", r.offset)
        x, y = _to_int(toks[0], r, "x"), _to_int(toks[1], r, "y")
        w, h = _to_int(toks[2], r, "w"), _to_int(toks[3], r, "h")
        weight = _to_float(toks[4], r, "weight")
        if x < 0 or y < 0 or w < 1 or h < 1:
            raise CascadeFormatError(f"degenerate rect {x} {y} {w} {h}", r.offset)
        if x + w > window_w or y + h > window_h:
            raise CascadeFormatError(
                f"rect {x} {y} {w} {h} outside {window_w}x{window_h} window", r.offset)
        rects.append(WeightedRect(Rect(x, y, w, h), weight))
    if len(rects) not in (2, 3):
        raise CascadeFormatError(
            f"feature needs 2 or 3 rects, got {len(rects)}", rects_elem.offset)
    return HaarFeature(tuple(rects))


def parse_cascade_xml(buf: bytes) -> CascadeModel:
    """Parse cascade XML bytes into a validated CascadeModel."""
    root = _read_elements(buf)
    model_elem = _find_model_element(root)

    feature_type = model_elem.child("featureType")
    if feature_type is not None and feature_type.text.strip() not in ("", "HAAR"):
        raise CascadeFormatError(
            f"unsupported featureType {feature_type.text.strip()!r}",
            feature_type.offset)

    window_w, window_h = _parse_window(model_elem)
    if window_w < 4 or window_h < 4:
        raise CascadeFormatError(
            f"window {window_w}x{window_h} below minimum 4x4", model_elem.offset)

    features_elem = model_elem.require("features")
    features = tuple(
        _parse_feature(f, window_w, window_h) for f in features_elem.children
    )
    if not features:
        raise CascadeFormatError("empty features table", features_elem.offset)

    stages_elem = model_elem.require("stages")
    stages = []
    for stage_elem in stages_elem.children:
        if stage_elem.child("trees") is not None:
            raise CascadeFormatError("old-format cascade stages are not supported",
                                     stage_elem.offset)
        thr_elem = stage_elem.require("stageThreshold")
        threshold = _to_float(_numbers(thr_elem, "stageThreshold")[0], thr_elem,
                              "stage threshold")
        weak_elem = stage_elem.require("weakClassifiers")
        stumps = tuple(_parse_stump(w) for w in weak_elem.children)
        if not stumps:
            raise CascadeFormatError("stage with no weak classifiers",
                                     weak_elem.offset)
        for s in stumps:
            if not 0 <= s.feature < len(features):
                raise CascadeFormatError(
                    f"feature index {s.feature} out of range, table has "
                    f"{len(features)} entries", weak_elem.offset)
        stages.append(Stage(threshold, stumps))
    if not stages:
        raise CascadeFormatError("cascade with no stages", stages_elem.offset)

    return CascadeModel(window_w, window_h, features, tuple(stages))


def dump_cascade_xml(model: CascadeModel) -> bytes:
    """Canonical text dump. parse_cascade_xml(dump_cascade_xml(m)) == m."""
    out = ["<?xml version=\"1.0\"?>", "<opencv_storage>",
           "<cascade type_id=\"opencv-cascade-classifier\">",
           "  <stageType>BOOST</stageType>",
           "  <featureType>HAAR</featureType>",
           f"  <size>{model.window_w} {model.window_h}</size>",
           "  <stages>"]
    for stage in model.stages:
        out.append("    <_>")
        out.append(f"      <maxWeakCount>{len(stage.stumps)}</maxWeakCount>")
        out.append(f"      <stageThreshold>{stage.threshold!r}</stageThreshold>")
        out.append("      <weakClassifiers>")
        for s in stage.stumps:
            out.append("        <_>")
            out.append(f"          <internalNodes>0 -1 {s.feature} "
                       f"{s.threshold!r}</internalNodes>")
            out.append(f"          <leafValues>{s.left_leaf!r} "
                       f"{s.right_leaf!r}</leafValues>")
            out.append("        </_>")
        out.append("      </weakClassifiers>")
        out.append("    </_>")
    out.append("  </stages>")
    out.append("  <features>")
    for f in model.features:
        out.append("    <_>")
        out.append("      <rects>")
        for wr in f.rects:
            r = wr.rect
            out.append(f"        <_>{r.x} {r.y} {r.w} {r.h} {wr.weight!r}</_>")
        out.append("      </rects>")
        out.append("      <tilted>0</tilted>")
        out.append("    </_>")
    out.append("  </features>")
    out.append("</cascade>")
    out.append("</opencv_storage>")
    return "\n".join(out).encode("ascii") + b"\n"
