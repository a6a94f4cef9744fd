"""Grid sweeps over scenario parameters.

An axis is a dotted path into the scenario mapping. Inside lists, a path
part selects the element whose ``name`` or ``id`` matches, or an integer
index: ``sim.elements.rs.value``, ``phil.amplifier.delay``,
``network.links.wan.loss_probability``.

Each cell runs with its own seed, ``derive_seed(seed, index)``: the first
8 bytes (big-endian) of ``sha256(f"{seed}:{index}")`` with the top bit
cleared, so any cell can be reproduced on its own.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..errors import ConfigError, CosimError
from .experiment import run_experiment
from .scenario import validate


def derive_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


def _child(node, part, path):
    if isinstance(node, dict):
        if part not in node:
            raise ConfigError(f"sweep path {path!r}: no key {part!r}")
        return node, part
    if isinstance(node, list):
        for i, item in enumerate(node):
            if isinstance(item, dict) and part in (item.get("name"), item.get("id")):
                return node, i
        if part.lstrip("-").isdigit() and -len(node) <= int(part) < len(node):
            return node, int(part)
        raise ConfigError(f"sweep path {path!r}: no list element named {part!r}")
    raise ConfigError(f"sweep path {path!r}: cannot descend into {type(node).__name__} at {part!r}")


def set_path(raw: dict, path: str, value: Any) -> None:
    """Assign ``value`` at ``path``. Only the last key may be new (to set a default)."""
    parts = path.split(".")
    node = raw
    for part in parts[:-1]:
        parent, key = _child(node, part, path)
        node = parent[key]
    last = parts[-1]
    if isinstance(node, dict):
        node[last] = value
    else:
        parent, key = _child(node, last, path)
        parent[key] = value


def get_path(raw: dict, path: str):
    node = raw
    for part in path.split("."):
        parent, key = _child(node, part, path)
        node = parent[key]
    return node


@dataclass
class SweepCell:
    index: int
    params: dict[str, Any]
    seed: int
    metrics: Any = None
    error: str | None = None

    def row(self) -> dict[str, Any]:
        out = {"index": self.index, "seed": self.seed, **self.params}
        m = self.metrics
        out.update({
            "verdict": None if m is None else m.verdict,
            "onset": None if m is None else m.onset,
            "rms_v_ref": None if m is None else m.rms_error.get("v_ref"),
            "rms_i_fb": None if m is None else m.rms_error.get("i_fb"),
            "phase_error": None if m is None else m.phase_error,
            "stale_commands": None if m is None else m.stale_commands,
            "error": self.error,
        })
        return out


@dataclass
class SweepResult:
    axes: list[str]
    cells: list[SweepCell] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [c.row() for c in self.cells]


def sweep(raw: dict, axes: Sequence[tuple[str, Sequence[Any]]], *, pacing: bool = False) -> SweepResult:
    """Run the cartesian product of ``axes`` over the scenario mapping ``raw``.

    A failing cell records its error and the sweep continues.
    """
    result = SweepResult([a for a, _ in axes])
    if not axes or any(len(v) == 0 for _, v in axes):
        return result
    base = validate(raw)
    for path, _ in axes:
        # fail early on paths that cannot resolve; new leaf keys are allowed
        probe = copy.deepcopy(raw)
        set_path(probe, path, None)
    for index, combo in enumerate(itertools.product(*[v for _, v in axes])):
        params = dict(zip(result.axes, combo))
        cell_raw = copy.deepcopy(raw)
        seed = derive_seed(base.seed, index)
        cell_raw["seed"] = seed
        cell = SweepCell(index, params, seed)
        try:
            for path, value in params.items():
                set_path(cell_raw, path, value)
            cell.metrics = run_experiment(validate(cell_raw), pacing=pacing).metrics
        except (CosimError, ValueError) as exc:
            cell.error = f"{type(exc).__name__}: {exc}"
        result.cells.append(cell)
    return result


def sweep_csv(result: SweepResult) -> str:
    rows = result.rows()
    if not rows:
        cols = ["index", "seed", *result.axes, "verdict", "onset", "rms_v_ref", "rms_i_fb",
                "phase_error", "stale_commands", "error"]
        return ",".join(cols) + "\n"
    cols = list(rows[0])
    lines = [",".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(f"{v:.8e}")
            else:
                s = str(v)
                cells.append('"' + s.replace('"', '""') + '"' if ("," in s or '"' in s or "\n" in s) else s)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
