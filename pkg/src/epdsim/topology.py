"""Deployment notation parsing and the device/instance layout it induces.

Notation grammar:
  * top level is hyphen-separated device groups;
  * a bare token (``EP``, ``D``) is one device hosting one instance whose
    adjacent stage letters are coupled (they share an execution slot);
  * a parenthesized group (``(E-PD)``) is one device hosting several
    logically isolated instances, one per hyphen-separated item;
  * ``TPk`` is a monolithic instance of all three stages spanning k devices
    with tensor parallelism; ``TPkx2`` (or the multiplication sign) or
    ``(...)x2`` replicates a group.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import NotationError


class Stage(str, Enum):
    ENCODE = "E"
    PREFILL = "P"
    DECODE = "D"


STAGE_ORDER = (Stage.ENCODE, Stage.PREFILL, Stage.DECODE)


@dataclass(frozen=True)
class Instance:
    id: int
    stages: tuple[Stage, ...]
    device_ids: tuple[int, ...]
    tp_degree: int = 1

    def __post_init__(self):
        if not self.stages:
            raise ValueError("instance needs at least one stage")
        if len(set(self.device_ids)) != len(self.device_ids):
            raise ValueError("device_ids must be distinct")
        if self.tp_degree != len(self.device_ids):
            raise ValueError("tp_degree must equal the device span")

    @property
    def coupled(self) -> bool:
        return len(self.stages) > 1

    def has_stage(self, stage: Stage) -> bool:
        return stage in self.stages


@dataclass(frozen=True)
class Deployment:
    notation: str
    devices: int
    instances: tuple[Instance, ...]

    @property
    def colocation(self) -> dict[int, set[int]]:
        mapping: dict[int, set[int]] = {d: set() for d in range(self.devices)}
        for inst in self.instances:
            for dev in inst.device_ids:
                mapping[dev].add(inst.id)
        return mapping

    def instances_with_stage(self, stage: Stage) -> list[Instance]:
        return [inst for inst in self.instances if inst.has_stage(stage)]


_REPLICA_RE = re.compile(r"^(?P<body>.*?)(?:[x×](?P<count>\d+))?$")
_TP_RE = re.compile(r"^TP(?P<k>\d+)$")
_STAGE_LETTERS = {"E": Stage.ENCODE, "P": Stage.PREFILL, "D": Stage.DECODE}


def _split_top_level(notation: str) -> list[str]:
    groups, depth, start = [], 0, 0
    for i, ch in enumerate(notation):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise NotationError(f"unbalanced ')' in {notation!r}", notation)
        elif ch == "-" and depth == 0:
            groups.append(notation[start:i])
            start = i + 1
    if depth != 0:
        raise NotationError(f"unbalanced '(' in {notation!r}", notation)
    groups.append(notation[start:])
    return groups


def _parse_stage_token(token: str) -> tuple[Stage, ...]:
    if not token:
        raise NotationError("empty stage token", token)
    stages = []
    for ch in token:
        if ch not in _STAGE_LETTERS:
            raise NotationError(f"unknown stage letter {ch!r} in token {token!r}", ch)
        stage = _STAGE_LETTERS[ch]
        if stage in stages:
            raise NotationError(f"stage {ch!r} repeated within token {token!r}", token)
        stages.append(stage)
    # canonical order inside a coupled instance is always E -> P -> D
    return tuple(s for s in STAGE_ORDER if s in stages)


def parse_deployment(notation: str) -> Deployment:
    """Parse a deployment notation string into its device/instance layout."""
    if not notation or not notation.strip():
        raise NotationError("empty deployment notation", notation)
    text = notation.strip().replace(" ", "")
    instances: list[Instance] = []
    device_cursor = 0

    for group in _split_top_level(text):
        m = _REPLICA_RE.match(group)
        body = m.group("body")
        replicas = int(m.group("count")) if m.group("count") else 1
        if not body:
            raise NotationError(f"empty group in {notation!r}", group)
        if replicas < 1:
            raise NotationError(f"replica count must be >= 1 in {group!r}", group)

        for _ in range(replicas):
            if body.startswith("("):
                if not body.endswith(")"):
                    raise NotationError(f"unterminated group {body!r}", body)
                inner = body[1:-1]
                if not inner:
                    raise NotationError(f"empty parentheses in {notation!r}", body)
                seen: set[Stage] = set()
                for item in inner.split("-"):
                    stages = _parse_stage_token(item)
                    overlap = seen.intersection(stages)
                    if overlap:
                        raise NotationError(
                            f"stage {sorted(s.value for s in overlap)[0]!r} repeated within group {body!r}",
                            body)
                    seen.update(stages)
                    instances.append(Instance(
                        id=len(instances), stages=stages,
                        device_ids=(device_cursor,), tp_degree=1))
                device_cursor += 1
            else:
                tp = _TP_RE.match(body)
                if tp:
                    k = int(tp.group("k"))
                    if k < 1:
                        raise NotationError(f"tensor-parallel degree must be >= 1 in {body!r}", body)
                    devs = tuple(range(device_cursor, device_cursor + k))
                    instances.append(Instance(
                        id=len(instances), stages=STAGE_ORDER,
                        device_ids=devs, tp_degree=k))
                    device_cursor += k
                else:
                    stages = _parse_stage_token(body)
                    instances.append(Instance(
                        id=len(instances), stages=stages,
                        device_ids=(device_cursor,), tp_degree=1))
                    device_cursor += 1

    deployment = Deployment(notation=text, devices=device_cursor,
                            instances=tuple(instances))
    missing = [s.value for s in STAGE_ORDER if not deployment.instances_with_stage(s)]
    if missing:
        raise NotationError(
            f"deployment {notation!r} has no instance for stage(s) {', '.join(missing)}",
            missing[0])
    return deployment


def format_deployment(d: Deployment) -> str:
    """Canonical notation; parse(format(d)) is structurally equal to d."""
    groups: list[str] = []
    by_device: dict[int, list[Instance]] = {}
    consumed: set[int] = set()
    for inst in d.instances:
        by_device.setdefault(inst.device_ids[0], []).append(inst)
    for dev in range(d.devices):
        if dev in consumed:
            continue
        residents = by_device.get(dev, [])
        if not residents:
            continue
        if len(residents) == 1 and residents[0].tp_degree > 1:
            inst = residents[0]
            groups.append(f"TP{inst.tp_degree}")
            consumed.update(inst.device_ids)
            continue
        tokens = ["".join(s.value for s in inst.stages) for inst in residents]
        if len(tokens) == 1:
            groups.append(tokens[0])
        else:
            groups.append("(" + "-".join(tokens) + ")")
        consumed.add(dev)
    return "-".join(groups)


def colocated_peers(d: Deployment, instance_id: int) -> set[int]:
    """Ids of all other instances sharing at least one device with the given one."""
    try:
        inst = next(i for i in d.instances if i.id == instance_id)
    except StopIteration:
        raise LookupError(f"unknown instance id {instance_id}") from None
    devices = set(inst.device_ids)
    return {
        other.id for other in d.instances
        if other.id != instance_id and devices.intersection(other.device_ids)
    }
