"""Fine-class to navigability-group label machinery.

A grouping lives in JSON::

    {"classes": [...fine names, index = id...],        (optional)
     "groups": [{"name": ..., "cost_rank": ...}, ...],
     "mapping": {"<fine name or id>": <group id>, ...},
     "ignore": [255]}

Group ids are list positions in ``groups``. When ``classes`` is given every
listed id must be mapped exactly once.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError

IGNORE_LABEL = 255
DEFAULT_CONFIG = "rugd_groups.json"


@dataclass(frozen=True)
class Group:
    name: str
    cost_rank: int


@dataclass(frozen=True)
class GroupMap:
    groups: tuple[Group, ...]
    mapping: dict[int, int]
    class_names: tuple[str, ...] | None = None
    ignore: tuple[int, ...] = (IGNORE_LABEL,)
    _table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = np.full(256, -1, dtype=np.int64)
        for fine, g in self.mapping.items():
            table[fine] = g
        for ig in self.ignore:
            table[ig] = IGNORE_LABEL
        object.__setattr__(self, "_table", table)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.groups]

    def group_id(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"no group named {name!r}") from None

    @classmethod
    def identity(cls, n: int) -> "GroupMap":
        return cls(tuple(Group(str(i), i) for i in range(n)), {i: i for i in range(n)})

    @classmethod
    def from_dict(cls, cfg: dict) -> "GroupMap":
        return _parse(cfg)

    def to_dict(self) -> dict:
        out = {
            "groups": [{"name": g.name, "cost_rank": g.cost_rank} for g in self.groups],
            "mapping": {str(k): v for k, v in sorted(self.mapping.items())},
            "ignore": list(self.ignore),
        }
        if self.class_names is not None:
            out["classes"] = list(self.class_names)
        return out


def _parse(cfg: dict) -> GroupMap:
    if not isinstance(cfg, dict):
        raise ConfigError("grouping config must be a JSON object")
    raw_groups = cfg.get("groups")
    if not raw_groups:
        raise ConfigError("grouping config needs a non-empty 'groups' list")
    groups = []
    for i, g in enumerate(raw_groups):
        if not isinstance(g, dict) or "name" not in g:
            raise ConfigError(f"group {i} needs a 'name'")
        groups.append(Group(str(g["name"]), int(g.get("cost_rank", i))))
    n_groups = len(groups)

    classes = cfg.get("classes")
    names = tuple(str(c) for c in classes) if classes is not None else None
    name_to_id = {n: i for i, n in enumerate(names)} if names else {}
    ignore = tuple(int(i) for i in cfg.get("ignore", [IGNORE_LABEL]))

    mapping: dict[int, int] = {}
    for key, gid in cfg.get("mapping", {}).items():
        if key in name_to_id:
            fine = name_to_id[key]
        else:
            try:
                fine = int(key)
            except ValueError:
                raise ConfigError(f"unknown fine class {key!r} in mapping") from None
        if not 0 <= fine < 256 or fine in ignore:
            raise ConfigError(f"fine class id {fine} is not a valid 8-bit label")
        if fine in mapping:
            raise ConfigError(f"fine class {key!r} (id {fine}) is assigned twice")
        if not isinstance(gid, int) or isinstance(gid, bool):
            raise ConfigError(f"group id for {key!r} must be an integer, got {gid!r}")
        if not 0 <= gid < n_groups:
            raise ConfigError(f"group id {gid} for {key!r} outside [0, {n_groups})")
        mapping[fine] = gid

    if names is not None:
        missing = sorted(set(range(len(names))) - set(mapping))
        if missing:
            listed = ", ".join(f"{i} ({names[i]})" for i in missing)
            raise ConfigError(f"unmapped fine class ids: {listed}")
    used = set(mapping.values())
    unused = sorted(set(range(n_groups)) - used)
    if unused:
        raise ConfigError(f"group ids are not dense: no class maps to group(s) {unused}")
    return GroupMap(tuple(groups), mapping, names, ignore)


def load_group_map(path=None) -> GroupMap:
    """Load and validate a grouping config; ``None`` gives the shipped default."""
    if path is None:
        text = resources.files("navseg").joinpath("data", DEFAULT_CONFIG).read_text()
        source = DEFAULT_CONFIG
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read grouping config {path}: {exc}") from None
        source = str(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON ({exc})") from None
    return _parse(cfg)


def remap(labels, gm: GroupMap) -> np.ndarray:
    """Fine label map -> group label map; ignore labels pass through as 255."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise DataError("fine labels must be 8-bit values")
    out = gm._table[labels.astype(np.intp)]
    bad = out < 0
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"unmapped fine label {int(labels[pos])} at pixel {pos}")
    return out.astype(np.uint8)


def binary_masks(group_labels, n_groups: int) -> np.ndarray:
    """[G, H, W] uint8 masks with mask[g] = (labels == g)."""
    group_labels = np.asarray(group_labels)
    return (group_labels[None] == np.arange(n_groups).reshape((-1,) + (1,) * group_labels.ndim)).astype(np.uint8)


def grouping_effect(pred_fine, gt_fine, gm: GroupMap) -> list[dict]:
    """Per-group pixel accuracy before and after collapsing labels into groups.

    ``fine_acc``: share of the group's GT pixels whose fine prediction is
    exactly right. ``group_acc``: share whose prediction lands in the right
    group. ``delta = group_acc - fine_acc`` is never negative.
    """
    pred_fine = np.asarray(pred_fine)
    gt_fine = np.asarray(gt_fine)
    if pred_fine.shape != gt_fine.shape:
        raise DataError(f"prediction shape {pred_fine.shape} != ground truth shape {gt_fine.shape}")
    gt_g = remap(gt_fine, gm)
    pred_g = gm._table[pred_fine.astype(np.intp)]
    rows = []
    for g, group in enumerate(gm.groups):
        sel = gt_g == g
        n = int(sel.sum())
        fine_hits = int((pred_fine[sel] == gt_fine[sel]).sum())
        group_hits = int((pred_g[sel] == g).sum())
        fine_acc = fine_hits / n if n else math.nan
        group_acc = group_hits / n if n else math.nan
        rows.append({
            "group": group.name,
            "pixels": n,
            "fine_acc": fine_acc,
            "group_acc": group_acc,
            "delta": (group_hits - fine_hits) / n if n else math.nan,
        })
    return rows
