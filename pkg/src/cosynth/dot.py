"""Graphviz DOT rendering of observers and insertion games."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

from .observer import Observer
from .pmdp import BOTTOM, InsertionPmdp, format_word
from .posy import format_number

__all__ = ["export_dot", "observer_dot", "pmdp_dot"]


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def observer_dot(obs: Observer, name: str | None = None) -> str:
    name = name or ("safe_observer" if obs.safe else "observer")
    ids = {n: f"n{k}" for k, n in enumerate(obs.nodes)}
    lines = [f"digraph {name} {{", "  rankdir=LR;", "  node [shape=ellipse];"]
    lines.append('  start [shape=point, label=""];')
    for node in obs.nodes:
        attrs = [f"label={_q(obs.label(node) if node else '∅')}"]
        if node in obs.revealing:
            attrs.append("style=filled, fillcolor=gray")
        lines.append(f"  {ids[node]} [{', '.join(attrs)}];")
    lines.append(f"  start -> {ids[obs.initial]};")
    for node in obs.nodes:
        for e, nxt in obs.successors(node):
            lines.append(f"  {ids[node]} -> {ids[nxt]} [label={_q(e)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def pmdp_dot(pmdp: InsertionPmdp, scheduler: Mapping | None = None, name: str = "pmdp") -> str:
    """Single boxes for system states, double boxes for insertion states,
    blocking states shaded.  Insertion edges sharing a target are merged
    into one edge listing every string (with scheduler weights if given)."""
    lines = [f"digraph {name} {{", "  node [shape=box];"]
    lines.append('  start [shape=point, label=""];')
    for i in range(len(pmdp.states)):
        attrs = [f"label={_q(pmdp.label(i))}"]
        if not pmdp.is_system(i):
            attrs.append("peripheries=2")
        if i in pmdp.sinks:
            attrs.append("style=filled, fillcolor=gray")
        lines.append(f"  s{i} [{', '.join(attrs)}];")
    lines.append(f"  start -> s{pmdp.initial};")
    for i in range(len(pmdp.states)):
        acts = pmdp.actions.get(i, ())
        if pmdp.is_system(i):
            for j, f in pmdp.transitions.get((i, BOTTOM), []):
                lines.append(f"  s{i} -> s{j} [label={_q(f'{pmdp.states[j].event}, {f}')}];")
            continue
        by_target: dict[int, list[str]] = {}
        for a in acts:
            (j, _), = pmdp.transitions[(i, a)]
            text = format_word(a)
            if scheduler is not None:
                text += f": {format_number(scheduler.get((i, a), 0.0))}"
            by_target.setdefault(j, []).append(text)
        for j, texts in by_target.items():
            lines.append(f"  s{i} -> s{j} [label={_q(', '.join(texts))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(artifact, path=None, scheduler: Mapping | None = None) -> str:
    """Render ``artifact`` and, if ``path`` is given, write it there."""
    if isinstance(artifact, Observer):
        text = observer_dot(artifact)
    elif isinstance(artifact, InsertionPmdp):
        text = pmdp_dot(artifact, scheduler)
    else:
        raise TypeError(f"cannot render {type(artifact).__name__} as DOT")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
