"""Scenario files: parsing, validation, serialization and the script runner.

A scenario is line-oriented text. ``#`` starts a comment, blank lines are
ignored, and ``[section]`` headers switch between sections::

    [scenario]
    name = hue-hijack
    seed = 7
    master_key = 9f5595f10257c8a469cbbd15e4e3ac6b

    [path_loss]
    reference_loss_db = 34.0

    [networks]
    home: pan=0x1a2b ext_pan=0x00178801aabbccdd channel=11 key=random

    [nodes]
    bridge: profile=hue-bridge x=0.0 y=0.0 network=home
    bulb1: profile=hue-bulb x=1.5 y=0.0
    eve: profile=attacker x=10.0 y=0.0 tx=26.0 master_key=shared

    [script]
    join initiator=bridge target=bulb1
    attack kind=hijack attacker=eve target=bulb1 key=e0e1e2e3e4e5e6e7e8e9eaebecedeeef
    expect node=bulb1 key=e0e1e2e3e4e5e6e7e8e9eaebecedeeef

The full grammar lives in docs/scenario-format.md.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import attacks, wire
from .airsim import Air, PathLossModel
from .attacks import AttackerConfig, AttackerNode, AttackOutcome
from .crypto import Key128
from .devices import commissioning
from .devices.nodes import EndDeviceNode, InitiatorNode
from .devices.profiles import PROFILES
from .devices.state import (
    EndDeviceState,
    InitiatorState,
    NetworkParams,
    Unsupported,
    physical_reset,
    press_button,
    snapshot_line,
)

ATTACKER_PROFILE = "attacker"
SHARED_KEY = "shared"
RANDOM_KEY = "random"

_VENDOR_PREFIX = {
    "hue": 0x00178801_00000000,
    "lightify": 0x84182600_00000000,
    "link": 0x000D6F00_00000000,
}

VERBS = ("advance", "press_button", "join", "recover", "user_command", "physical_reset", "attack", "expect")
ATTACK_KINDS = ("scan", "blink", "reset", "dos-channel", "dos-join", "hijack", "extract-key", "inject")
TARGETED_KINDS = ("blink", "reset", "dos-channel", "dos-join", "hijack")
MASTER_KEY_KINDS = ("hijack", "extract-key")
COMMAND_KINDS = ("on", "off", "toggle", "level", "color")

_ID = re.compile(r"[A-Za-z][A-Za-z0-9_-]*\Z")
_HEX32 = re.compile(r"[0-9a-fA-F]{32}\Z")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ScenarioError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ExpectationFailed(ScenarioError):
    pass


# --------------------------------------------------------------------------
# Model


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    pan_id: int
    extended_pan_id: int
    channel: int
    key: str = RANDOM_KEY  # 32 hex digits or "random"
    update_id: int = 0


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    profile: str
    x: float = 0.0
    y: float = 0.0
    tx: float = 0.0
    network: str | None = None
    short: int | None = None
    ext: int | None = None
    channel: int | None = None
    spoof: str | None = None
    master_key: str | None = None
    ack_latency_us: int | None = None

    @property
    def is_attacker(self) -> bool:
        return self.profile == ATTACKER_PROFILE


@dataclass(frozen=True)
class Action:
    verb: str
    params: tuple[tuple[str, str], ...] = ()
    at: int | None = None
    line: int = field(default=0, compare=False)

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.params:
            if k == key:
                return v
        return default

    def text(self) -> str:
        parts = [self.verb] + [f"{k}={v}" for k, v in self.params]
        if self.at is not None:
            parts.append(f"at={self.at}")
        return " ".join(parts)


@dataclass(frozen=True)
class Scenario:
    name: str = "unnamed"
    seed: int = 0
    master_key: str = "00" * 16
    path_loss: tuple[tuple[str, float], ...] = ()
    networks: tuple[NetworkSpec, ...] = ()
    nodes: tuple[NodeSpec, ...] = ()
    script: tuple[Action, ...] = ()

    def model(self) -> PathLossModel:
        return PathLossModel(**dict(self.path_loss))

    def node(self, node_id: str) -> NodeSpec | None:
        return next((n for n in self.nodes if n.node_id == node_id), None)

    def network(self, name: str) -> NetworkSpec | None:
        return next((n for n in self.networks if n.name == name), None)


# --------------------------------------------------------------------------
# Parsing

_SECTIONS = ("scenario", "path_loss", "networks", "nodes", "script")
_PATH_LOSS_KEYS = tuple(f.name for f in fields(PathLossModel))
_NETWORK_KEYS = {"pan": "pan_id", "ext_pan": "extended_pan_id", "channel": "channel", "key": "key", "update_id": "update_id"}
_NODE_KEYS = ("profile", "x", "y", "tx", "network", "short", "ext", "channel", "spoof", "master_key", "ack_latency_us")
_NODE_INTS = ("short", "ext", "channel", "ack_latency_us")
_NODE_FLOATS = ("x", "y", "tx")


def _tokens(text: str, start: int):
    """Yield (column, token) for whitespace-separated tokens; columns are 1-based."""
    for m in re.finditer(r"\S+", text):
        yield start + m.start() + 1, m.group()


def _pairs(text: str, start: int, lineno: int) -> list[tuple[int, str, str]]:
    out = []
    seen = set()
    for col, tok in _tokens(text, start):
        key, eq, value = tok.partition("=")
        if not eq or not key or not value:
            raise ParseError(f"expected key=value, got {tok!r}", lineno, col)
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", lineno, col)
        seen.add(key)
        out.append((col, key, value))
    return out


def _int(value: str, lineno: int, col: int) -> int:
    try:
        return int(value, 0)
    except ValueError:
        raise ParseError(f"expected an integer, got {value!r}", lineno, col) from None


def _float(value: str, lineno: int, col: int) -> float:
    try:
        result = float(value)
    except ValueError:
        raise ParseError(f"expected a number, got {value!r}", lineno, col) from None
    if not math.isfinite(result):
        raise ParseError(f"expected a finite number, got {value!r}", lineno, col)
    return result


def _labelled(line: str, lineno: int) -> tuple[str, str, int]:
    label, colon, rest = line.partition(":")
    label = label.strip()
    if not colon or not _ID.match(label):
        raise ParseError("expected '<id>: key=value ...'", lineno, 1)
    return label, rest, line.index(":") + 1


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text. Raises ParseError; semantic checks are left to validate()."""
    section = None
    header: dict[str, object] = {}
    path_loss: list[tuple[str, float]] = []
    networks: list[NetworkSpec] = []
    nodes: list[NodeSpec] = []
    script: list[Action] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]") or stripped[1:-1] not in _SECTIONS:
                raise ParseError(f"unknown section header {stripped!r}", lineno, indent + 1)
            section = stripped[1:-1]
            continue
        if section is None:
            raise ParseError("content before the first section header", lineno, indent + 1)
        if section in ("scenario", "path_loss"):
            key, eq, value = stripped.partition("=")
            vcol = indent + len(stripped) - len(value.lstrip()) + 1
            key, value = key.strip(), value.strip()
            if not eq or not key or not value:
                raise ParseError("expected 'key = value'", lineno, indent + 1)
            if section == "scenario":
                if key not in ("name", "seed", "master_key") or key in header:
                    raise ParseError(f"unexpected key {key!r} in [scenario]", lineno, indent + 1)
                header[key] = _int(value, lineno, vcol) if key == "seed" else value
            else:
                if key not in _PATH_LOSS_KEYS or key in dict(path_loss):
                    raise ParseError(f"unexpected key {key!r} in [path_loss]", lineno, indent + 1)
                path_loss.append((key, _float(value, lineno, vcol)))
        elif section == "networks":
            name, rest, offset = _labelled(line, lineno)
            kw: dict[str, object] = {}
            for col, key, value in _pairs(rest, offset, lineno):
                if key not in _NETWORK_KEYS:
                    raise ParseError(f"unknown network field {key!r}", lineno, col)
                kw[_NETWORK_KEYS[key]] = value if key == "key" else _int(value, lineno, col)
            for required in ("pan_id", "extended_pan_id", "channel"):
                if required not in kw:
                    raise ParseError(f"network {name!r} lacks {required}", lineno, 1)
            networks.append(NetworkSpec(name, **kw))
        elif section == "nodes":
            node_id, rest, offset = _labelled(line, lineno)
            kw = {}
            for col, key, value in _pairs(rest, offset, lineno):
                if key not in _NODE_KEYS:
                    raise ParseError(f"unknown node field {key!r}", lineno, col)
                if key in _NODE_INTS:
                    kw[key] = _int(value, lineno, col)
                elif key in _NODE_FLOATS:
                    kw[key] = _float(value, lineno, col)
                else:
                    kw[key] = value
            if "profile" not in kw:
                raise ParseError(f"node {node_id!r} lacks a profile", lineno, 1)
            nodes.append(NodeSpec(node_id, **kw))
        else:
            verb = stripped.split(None, 1)[0]
            if verb not in VERBS:
                raise ParseError(f"unknown action {verb!r}", lineno, indent + 1)
            at = None
            params = []
            for col, key, value in _pairs(line[indent + len(verb):], indent + len(verb), lineno):
                if key == "at":
                    at = _int(value, lineno, col)
                else:
                    params.append((key, value))
            script.append(Action(verb, tuple(params), at, lineno))
    return Scenario(
        name=str(header.get("name", "unnamed")),
        seed=int(header.get("seed", 0)),
        master_key=str(header.get("master_key", "00" * 16)),
        path_loss=tuple(path_loss),
        networks=tuple(networks),
        nodes=tuple(nodes),
        script=tuple(script),
    )


def serialize_scenario(s: Scenario) -> str:
    out = ["[scenario]", f"name = {s.name}", f"seed = {s.seed}", f"master_key = {s.master_key}"]
    if s.path_loss:
        out += ["", "[path_loss]"] + [f"{k} = {v!r}" for k, v in s.path_loss]
    if s.networks:
        out += ["", "[networks]"]
        for n in s.networks:
            out.append(
                f"{n.name}: pan=0x{n.pan_id:04x} ext_pan=0x{n.extended_pan_id:016x} "
                f"channel={n.channel} key={n.key} update_id={n.update_id}"
            )
    if s.nodes:
        out += ["", "[nodes]"]
        for n in s.nodes:
            parts = [f"{n.node_id}: profile={n.profile}", f"x={n.x!r}", f"y={n.y!r}", f"tx={n.tx!r}"]
            if n.network is not None:
                parts.append(f"network={n.network}")
            if n.short is not None:
                parts.append(f"short=0x{n.short:04x}")
            if n.ext is not None:
                parts.append(f"ext=0x{n.ext:016x}")
            for name in ("channel", "spoof", "master_key", "ack_latency_us"):
                value = getattr(n, name)
                if value is not None:
                    parts.append(f"{name}={value}")
            out.append(" ".join(parts))
    if s.script:
        out += ["", "[script]"] + [a.text() for a in s.script]
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Validation


def _check_channel(value: int, name: str) -> None:
    if value not in wire.CHANNELS:
        raise ValidationError(name, f"channel {value} outside 11..26")


def _check_key(value: str, name: str, allowed: tuple[str, ...] = ()) -> None:
    if value not in allowed and not _HEX32.match(value):
        raise ValidationError(name, f"expected 32 hex digits, got {value!r}")


def _check_uint(value: int, bits: int, name: str) -> None:
    if not 0 <= value < (1 << bits):
        raise ValidationError(name, f"{value} does not fit in {bits} bits")


def _parse_int(text: str | None, name: str) -> int | None:
    if text is None:
        return None
    try:
        return int(text, 0)
    except ValueError:
        raise ValidationError(name, f"expected an integer, got {text!r}") from None


def validate(s: Scenario) -> Scenario:
    """Semantic checks. Raises ValidationError naming the offending field."""
    _check_uint(s.seed, 64, "scenario.seed")
    _check_key(s.master_key, "scenario.master_key")
    try:
        s.model()
    except ValueError as exc:
        raise ValidationError("path_loss.exponent", str(exc)) from None
    seen: set[str] = set()
    for n in s.networks:
        where = f"networks.{n.name}"
        if n.name in seen:
            raise ValidationError(where, "duplicate network name")
        seen.add(n.name)
        _check_channel(n.channel, f"{where}.channel")
        _check_uint(n.pan_id, 16, f"{where}.pan")
        if n.pan_id == wire.BROADCAST_PAN:
            raise ValidationError(f"{where}.pan", "0xffff is the broadcast PAN")
        _check_uint(n.extended_pan_id, 64, f"{where}.ext_pan")
        _check_uint(n.update_id, 8, f"{where}.update_id")
        _check_key(n.key, f"{where}.key", (RANDOM_KEY,))
    seen = set()
    exts: set[int] = set()
    for n in s.nodes:
        where = f"nodes.{n.node_id}"
        if n.node_id in seen:
            raise ValidationError(where, "duplicate node id")
        seen.add(n.node_id)
        if n.profile not in PROFILES and not n.is_attacker:
            raise ValidationError(f"{where}.profile", f"unknown profile {n.profile!r}")
        if n.channel is not None:
            _check_channel(n.channel, f"{where}.channel")
        if n.network is not None and s.network(n.network) is None:
            raise ValidationError(f"{where}.network", f"no network named {n.network!r}")
        if n.short is not None:
            _check_uint(n.short, 16, f"{where}.short")
            if n.short >= 0xFFF8:
                raise ValidationError(f"{where}.short", "reserved short address")
        if n.ext is not None:
            _check_uint(n.ext, 64, f"{where}.ext")
            if n.ext in exts:
                raise ValidationError(f"{where}.ext", "extended address already used")
            exts.add(n.ext)
        if n.is_attacker:
            if n.network is not None:
                raise ValidationError(f"{where}.network", "attackers do not belong to a network")
            if n.master_key is not None:
                _check_key(n.master_key, f"{where}.master_key", (SHARED_KEY,))
            if n.ack_latency_us is not None and n.ack_latency_us < 0:
                raise ValidationError(f"{where}.ack_latency_us", "must not be negative")
        else:
            for name in ("spoof", "master_key", "ack_latency_us"):
                if getattr(n, name) is not None:
                    raise ValidationError(f"{where}.{name}", "only valid on attacker nodes")
    for n in s.nodes:
        if n.spoof is not None and s.node(n.spoof) is None:
            _parse_int(n.spoof, f"nodes.{n.node_id}.spoof")
    last_at = 0
    for i, a in enumerate(s.script, 1):
        validate_action(s, a, f"script.{i}")
        if a.at is not None:
            if a.at < last_at:
                raise ValidationError(f"script.{i}.at", f"{a.at} is earlier than a previous action time {last_at}")
            last_at = a.at
    return s


def _require_node(s: Scenario, a: Action, key: str, where: str, kinds: tuple[str, ...] = ()) -> NodeSpec:
    ref = a.get(key)
    if ref is None:
        raise ValidationError(f"{where}.{key}", "missing")
    node = s.node(ref)
    if node is None:
        raise ValidationError(f"{where}.{key}", f"no node named {ref!r}")
    if kinds == ("initiator",) and (node.is_attacker or not PROFILES[node.profile].is_initiator):
        raise ValidationError(f"{where}.{key}", f"{ref} is not an initiator")
    if kinds == ("attacker",) and not node.is_attacker:
        raise ValidationError(f"{where}.{key}", f"{ref} is not an attacker")
    if kinds == ("device",) and node.is_attacker:
        raise ValidationError(f"{where}.{key}", f"{ref} is an attacker")
    return node


def _validate_target(s: Scenario, value: str | None, where: str) -> None:
    if value is None:
        raise ValidationError(where, "missing")
    if s.node(value) is None:
        _parse_int(value, where)


def validate_action(s: Scenario, a: Action, where: str) -> None:
    if a.at is not None and a.at < 0:
        raise ValidationError(f"{where}.at", "must not be negative")
    v = a.verb
    if v == "advance":
        us, secs = a.get("us"), a.get("s")
        if (us is None) == (secs is None):
            raise ValidationError(f"{where}.us", "advance takes exactly one of us= or s=")
        if us is not None and (_parse_int(us, f"{where}.us") or 0) < 0:
            raise ValidationError(f"{where}.us", "must not be negative")
        if secs is not None:
            try:
                ok = float(secs) >= 0 and math.isfinite(float(secs))
            except ValueError:
                ok = False
            if not ok:
                raise ValidationError(f"{where}.s", f"expected a non-negative number, got {secs!r}")
    elif v == "press_button":
        _require_node(s, a, "node", where, ("initiator",))
    elif v == "physical_reset":
        _require_node(s, a, "node", where, ("device",))
    elif v in ("join", "recover"):
        _require_node(s, a, "initiator", where, ("initiator",))
        if a.get("target") is not None:
            _validate_target(s, a.get("target"), f"{where}.target")
    elif v == "user_command":
        _require_node(s, a, "initiator", where, ("initiator",))
        _require_node(s, a, "target", where, ("device",))
        _validate_command(a, where)
        count = _parse_int(a.get("count", "1"), f"{where}.count")
        if count < 1:
            raise ValidationError(f"{where}.count", "must be at least 1")
    elif v == "attack":
        kind = a.get("kind")
        if kind not in ATTACK_KINDS:
            raise ValidationError(f"{where}.kind", f"expected one of {', '.join(ATTACK_KINDS)}")
        _require_node(s, a, "attacker", where, ("attacker",))
        if kind in TARGETED_KINDS:
            _validate_target(s, a.get("target"), f"{where}.target")
        if kind == "blink":
            _check_uint(_parse_int(a.get("duration", "0xfffe"), f"{where}.duration"), 16, f"{where}.duration")
        if kind in ("dos-channel", "dos-join", "hijack", "inject") and a.get("channel") is not None:
            _check_channel(_parse_int(a.get("channel"), f"{where}.channel"), f"{where}.channel")
        if kind == "dos-channel" and a.get("channel") is None:
            raise ValidationError(f"{where}.channel", "missing")
        if kind in ("hijack", "inject") and a.get("key") is not None:
            _check_key(a.get("key"), f"{where}.key", ("last",))
        if kind == "inject":
            _validate_command(a, where)
        for key in ("bridge",):
            if a.get(key) is not None:
                _require_node(s, a, key, where, ("initiator",))
    elif v == "expect":
        if not a.params:
            raise ValidationError(f"{where}", "expect needs at least one assertion")
        if a.get("node") is not None:
            _require_node(s, a, "node", where, ("device",))
        for key, _ in a.params:
            if key != "node" and "." not in key and a.get("node") is None:
                raise ValidationError(f"{where}.{key}", "state assertions need node=<id>")


def _validate_command(a: Action, where: str) -> None:
    kind = a.get("command")
    if kind not in COMMAND_KINDS:
        raise ValidationError(f"{where}.command", f"expected one of {', '.join(COMMAND_KINDS)}")
    value = _parse_int(a.get("value", "0"), f"{where}.value")
    bits = {"level": 8, "color": 16}.get(kind, 0)
    if bits:
        _check_uint(value, bits, f"{where}.value")
    elif value:
        raise ValidationError(f"{where}.value", f"{kind} takes no value")


def load_scenario(path) -> Scenario:
    return validate(parse_scenario(Path(path).read_text()))


# --------------------------------------------------------------------------
# Execution


@dataclass
class RunResult:
    scenario: Scenario
    air: Air
    events: list[str]
    states: list[str]
    reports: list[AttackOutcome]
    expectations: list[tuple[Action, bool, str]]

    @property
    def failures(self) -> list[tuple[Action, str]]:
        return [(a, msg) for a, ok, msg in self.expectations if not ok]

    @property
    def ok(self) -> bool:
        return not self.failures

    def check(self) -> RunResult:
        if self.failures:
            action, msg = self.failures[0]
            raise ExpectationFailed(f"line {action.line}: {action.text()}: {msg}")
        return self

    def report_text(self) -> str:
        blocks = [o.report() for o in self.reports]
        lines = [f"expect line={a.line} {'ok' if ok else 'FAILED'} {a.text()}" + ("" if ok else f" ({msg})")
                 for a, ok, msg in self.expectations]
        if lines:
            blocks.append("\n".join(lines) + "\n")
        return "\n".join(blocks)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.log").write_text("".join(line + "\n" for line in self.events))
        (out / "states.txt").write_text("".join(line + "\n" for line in self.states))
        (out / "report.txt").write_text(self.report_text())
        return out


class Simulation:
    """A scenario instantiated on the air, ready to execute script actions."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.air = Air(scenario.model(), scenario.seed if seed is None else seed)
        self.master = Key128.from_hex(scenario.master_key)
        self.states: list[str] = []
        self.reports: list[AttackOutcome] = []
        self.expectations: list[tuple[Action, bool, str]] = []
        self.results: dict[str, dict[str, str]] = {}
        self._build()

    # -- setup -----------------------------------------------------------

    def _build(self) -> None:
        rng = self.air.rng
        nets = {}
        for n in self.scenario.networks:
            key = Key128(rng.getrandbits(128).to_bytes(16, "big")) if n.key == RANDOM_KEY else Key128.from_hex(n.key)
            nets[n.name] = NetworkParams(n.pan_id, n.extended_pan_id, n.channel, key, n.update_id, 0x0000)
        counters: dict[str, int] = {}
        for i, spec in enumerate(self.scenario.nodes, 1):
            ext = spec.ext if spec.ext is not None else _default_ext(spec.profile, i)
            if spec.is_attacker:
                continue
            profile = PROFILES[spec.profile]
            net = None
            if spec.network is not None:
                base = nets[spec.network]
                short = spec.short if spec.short is not None else (0x0000 if profile.is_initiator else None)
                if short is None:
                    counters[spec.network] = counters.get(spec.network, 1) + 1
                    short = counters[spec.network]
                net = replace(base, short_addr=short)
            factory = spec.channel if spec.channel is not None else 11
            if profile.is_initiator:
                state = InitiatorState(profile, ext, self.master, net, factory_channel=factory)
                node = InitiatorNode(spec.node_id, state, (spec.x, spec.y), spec.tx)
            else:
                state = EndDeviceState(profile, ext, self.master, net, factory_channel=factory)
                node = EndDeviceNode(spec.node_id, state, (spec.x, spec.y), spec.tx)
            self.air.add(node)
        # keep bridges from handing out addresses already taken
        taken = [n.state.net.short_addr for n in self.devices() if n.state.net is not None]
        for node in self.initiators():
            node.state.next_short_addr = max([node.state.next_short_addr] + [t + 1 for t in taken if t < 0xFFF7])
        for i, spec in enumerate(self.scenario.nodes, 1):
            if spec.is_attacker:
                self.air.add(AttackerNode(spec.node_id, self._attacker_config(spec, i)))

    def _attacker_config(self, spec: NodeSpec, index: int) -> AttackerConfig:
        spoof = None
        if spec.spoof is not None:
            ref = self.air.nodes.get(spec.spoof)
            spoof = ref.extended_addr if ref is not None else int(spec.spoof, 0)
        master = None
        if spec.master_key == SHARED_KEY:
            master = self.master
        elif spec.master_key is not None:
            master = Key128.from_hex(spec.master_key)
        cfg = AttackerConfig(
            tx_power_dbm=spec.tx,
            spoof_extended_src=spoof,
            master_key=master,
            position=(spec.x, spec.y),
            channel=spec.channel if spec.channel is not None else 11,
        )
        if spec.ext is not None:
            cfg.extended_addr = spec.ext
        if spec.short is not None:
            cfg.short_addr = spec.short
        if spec.ack_latency_us is not None:
            cfg.ack_latency_us = spec.ack_latency_us
        return cfg

    def devices(self) -> list[EndDeviceNode]:
        return [n for n in self.air.nodes.values() if isinstance(n, EndDeviceNode)]

    def initiators(self) -> list[InitiatorNode]:
        return [n for n in self.air.nodes.values() if isinstance(n, InitiatorNode)]

    def attackers(self) -> list[AttackerNode]:
        return [n for n in self.air.nodes.values() if isinstance(n, AttackerNode)]

    # -- snapshots -------------------------------------------------------

    def settle(self) -> None:
        for node in self.devices():
            for change in node.settle(self.air.now):
                self.air.record_change(node, change)

    def snapshot(self, label: str) -> None:
        self.settle()
        self.states.append(f"== {label} t={self.air.now}")
        for node in self.air.nodes.values():
            if hasattr(node, "state"):
                self.states.append(snapshot_line(node.node_id, node.state, self.air.now))

    def state_fields(self, node_id: str) -> dict[str, str]:
        self.settle()
        node = self.air.nodes[node_id]
        line = snapshot_line(node_id, node.state, self.air.now)
        return dict(part.split("=", 1) for part in line.split())

    # -- script ----------------------------------------------------------

    def run(self, actions=None) -> RunResult:
        actions = self.scenario.script if actions is None else actions
        for i, action in enumerate(actions, 1):
            self.execute(action, i)
        self.settle()
        return self.result()

    def result(self) -> RunResult:
        return RunResult(self.scenario, self.air, list(self.air.log), self.states, self.reports, self.expectations)

    def execute(self, action: Action, index: int = 0) -> dict[str, str]:
        air = self.air
        if action.at is not None:
            if action.at < air.now:
                air.note(f"action {index} requested at={action.at} starts late")
            else:
                air.run_until(action.at)
        label = f"{index} {action.text()}"
        if action.verb == "expect":
            self._expect(action)
            return {}
        self.snapshot(f"before {label}")
        air.note(f"action {index} {action.text()}")
        result = getattr(self, "_do_" + action.verb)(action)
        self.results[action.verb] = result
        self.snapshot(f"after {label}")
        return result

    def _node(self, ref: str):
        node = self.air.nodes.get(ref)
        if node is not None:
            return node
        return commissioning.node_by_extended(self.air, int(ref, 0))

    def _target_ext(self, ref: str) -> int:
        node = self.air.nodes.get(ref)
        return node.extended_addr if node is not None else int(ref, 0)

    def _do_advance(self, a: Action) -> dict[str, str]:
        us = int(a.get("us"), 0) if a.get("us") is not None else round(float(a.get("s")) * 1_000_000)
        self.air.run_for(us)
        return {"now": str(self.air.now)}

    def _do_press_button(self, a: Action) -> dict[str, str]:
        node = self.air.nodes[a.get("node")]
        try:
            press_button(node.state, self.air.now)
        except Unsupported as exc:
            return {"ok": "0", "error": "Unsupported", "reason": str(exc)}
        self.air.record_change(node, "button-pressed")
        return {"ok": "1"}

    def _do_physical_reset(self, a: Action) -> dict[str, str]:
        node = self.air.nodes[a.get("node")]
        try:
            physical_reset(node.state)
        except Unsupported as exc:
            return {"ok": "0", "error": "Unsupported", "reason": str(exc)}
        self.air.record_change(node, "physical-reset")
        return {"ok": "1"}

    def _target_filter(self, a: Action):
        ref = a.get("target")
        return None if ref is None else self._target_ext(ref)

    def _do_join(self, a: Action) -> dict[str, str]:
        bridge = self.air.nodes[a.get("initiator")]
        identify = a.get("identify", "1") != "0"
        try:
            report = commissioning.run_touchlink_join(bridge, self.air, self._target_filter(a), identify=identify)
        except commissioning.CommissioningError as exc:
            return {"ok": "0", "error": type(exc).__name__, "reason": str(exc)}
        return {
            "ok": "1",
            "target": report.target or f"0x{report.extended_addr:016x}",
            "short": f"0x{report.short_addr:04x}",
            "transaction_id": f"0x{report.transaction.transaction_id:08x}",
        }

    def _do_recover(self, a: Action) -> dict[str, str]:
        bridge = self.air.nodes[a.get("initiator")]
        try:
            rep = commissioning.bridge_touchlink_recovery(bridge, self.air, self._target_filter(a))
        except commissioning.CommissioningError as exc:
            return {"ok": "0", "error": type(exc).__name__, "reason": str(exc)}
        return {"ok": "1", "adopted": str(int(rep.adopted)), "channel": str(rep.after.channel)}

    def _do_user_command(self, a: Action) -> dict[str, str]:
        bridge = self.air.nodes[a.get("initiator")]
        target = self.air.nodes[a.get("target")]
        cmd = wire.ClusterCommand(a.get("command"), int(a.get("value", "0"), 0))
        count = int(a.get("count", "1"), 0)
        try:
            delivered = sum(commissioning.deliver_user_command(bridge, self.air, target, cmd) for _ in range(count))
        except commissioning.CommissioningError as exc:
            return {"ok": "0", "error": type(exc).__name__, "reason": str(exc), "delivered": "0", "undelivered": str(count)}
        return {"ok": "1", "delivered": str(delivered), "undelivered": str(count - delivered)}

    def _do_attack(self, a: Action) -> dict[str, str]:
        outcome = self.attack(a)
        self.reports.append(outcome)
        result = {"verdict": "success" if outcome.success else "failure", **outcome.details}
        self.results["attack"] = result
        return result

    # -- attacks ---------------------------------------------------------

    def attack(self, a: Action) -> AttackOutcome:
        """Run one attack action and return its outcome; errors become failed outcomes.

        MasterKeyRequired is re-raised: it is a configuration error, not an attack result.
        """
        kind = a.get("kind")
        attacker = self.air.nodes[a.get("attacker")]
        log_start = len(self.air.log)
        target_label = a.get("target", "all")
        try:
            try:
                return self._attack(kind, attacker, a, log_start)
            finally:
                attacker.tune(None)
        except attacks.MasterKeyRequired:
            raise
        except (attacks.AttackError, commissioning.CommissioningError, ValueError) as exc:
            sent = sum(1 for line in self.air.log[log_start:] if line.startswith(f"tx {attacker.node_id} "))
            details = {"error": type(exc).__name__, "reason": str(exc)}
            return AttackOutcome(kind, target_label, False, sent, 0, details)

    def _discover(self, attacker: AttackerNode, a: Action) -> attacks.DiscoveredDevice:
        ext = self._target_ext(a.get("target"))
        channels = _channels(a.get("channels"))
        found = attacks.active_scan(attacker, self.air, channels)
        target = attacks.find_target(found, ext)
        if target is None:
            raise commissioning.NoDeviceFound(f"0x{ext:016x} did not answer the scan")
        return target

    def _bridge(self, a: Action):
        ref = a.get("bridge")
        return None if ref is None else self.air.nodes[ref]

    def _attack(self, kind: str, attacker: AttackerNode, a: Action, log_start: int) -> AttackOutcome:
        air = self.air
        if kind in MASTER_KEY_KINDS and attacker.config.master_key is None:
            raise attacks.MasterKeyRequired(f"{kind} needs a master key on attacker {attacker.node_id}")
        if kind == "scan":
            found = attacks.active_scan(attacker, air, _channels(a.get("channels")))
            return attacks.scan_outcome(attacker, air, found, log_start)
        if kind == "extract-key":
            return self._extract(attacker, a, log_start)
        if kind == "inject":
            return self._inject(attacker, a)
        target = self._discover(attacker, a)
        if kind == "blink":
            return attacks.blink_attack(attacker, air, target, int(a.get("duration", "0xfffe"), 0))
        if kind == "reset":
            return attacks.reset_attack(attacker, air, target)
        if kind == "dos-channel":
            update = a.get("update_id")
            return attacks.dos_channel_change(
                attacker, air, target, int(a.get("channel"), 0),
                None if update is None else int(update, 0), self._bridge(a),
            )
        if kind == "dos-join":
            channel = a.get("channel")
            return attacks.dos_join_phantom(attacker, air, target, None if channel is None else int(channel, 0), self._bridge(a))
        # hijack
        key = a.get("key")
        key = Key128(air.rng.getrandbits(128).to_bytes(16, "big")) if key is None else Key128.from_hex(key)
        channel, pan = a.get("channel"), a.get("pan")
        return attacks.hijack(
            attacker, air, target, key,
            None if channel is None else int(channel, 0),
            None if pan is None else int(pan, 0),
        )

    def _extract(self, attacker: AttackerNode, a: Action, log_start: int) -> AttackOutcome:
        capture = attacker.capture()
        tid = a.get("transaction_id")
        key = attacks.extract_network_key(capture, attacker.config.master_key, None if tid is None else int(tid, 0))
        details = {"key": key.hex()}
        join = attacks.captured_join(capture, None if tid is None else int(tid, 0))
        if join is not None:
            details.update(
                transaction_id=f"0x{join.transaction_id:08x}", pan=f"0x{join.pan_id:04x}", channel=str(join.channel)
            )
        holders = sorted(
            n.node_id for n in self.air.nodes.values()
            if hasattr(n, "state") and n.state.net is not None and n.state.net.network_key == key
        )
        details["matches"] = ",".join(holders) or "none"
        return AttackOutcome("extract-key", "capture", True, 0, len(capture), details)

    def _inject(self, attacker: AttackerNode, a: Action) -> AttackOutcome:
        last = self.results.get("attack", {})
        key_text = a.get("key", "last")
        if key_text == "last":
            key_text = last.get("key")
            if key_text is None:
                raise attacks.AttackError("inject needs key=<hex> or a preceding hijack/extract-key")
        pan = a.get("pan", last.get("pan"))
        channel = a.get("channel", last.get("channel"))
        if pan is None or channel is None:
            raise attacks.AttackError("inject needs pan= and channel= or a preceding hijack/extract-key")
        dst = a.get("dst", "broadcast")
        if dst == "broadcast":
            dst_short = wire.BROADCAST_SHORT
        elif dst in self.air.nodes:
            dst_short = self.air.nodes[dst].short_addr
            if dst_short is None:
                raise attacks.AttackError(f"{dst} has no short address")
        else:
            dst_short = int(dst, 0)
        cmd = wire.ClusterCommand(a.get("command"), int(a.get("value", "0"), 0))
        return attacks.inject_command(
            attacker, self.air, Key128.from_hex(key_text), int(pan, 0), int(channel, 0), cmd, dst_short
        )

    # -- expectations ----------------------------------------------------

    def _expect(self, a: Action) -> None:
        node_id = a.get("node")
        state = self.state_fields(node_id) if node_id is not None else {}
        for key, want in a.params:
            if key == "node":
                continue
            if "." in key:
                verb, _, name = key.partition(".")
                got = self.results.get(verb, {}).get(name)
                source = f"last {verb}"
            else:
                got = state.get(key)
                source = node_id
            if got is None:
                self.expectations.append((a, False, f"{source} has no field {key.split('.')[-1]!r}"))
                return
            if not _same(got, want):
                self.expectations.append((a, False, f"{key}: expected {want}, got {got}"))
                return
        self.expectations.append((a, True, ""))


def _same(got: str, want: str) -> bool:
    if got == want:
        return True
    try:
        return int(got, 0) == int(want, 0)
    except ValueError:
        return got.lower() == want.lower()


def _channels(text: str | None):
    if text is None:
        return wire.PRIMARY_CHANNELS
    return [int(c, 0) for c in text.split(",")]


def _default_ext(profile: str, index: int) -> int:
    vendor = profile.split("-")[0]
    return _VENDOR_PREFIX.get(vendor, 0x00124B00_00000000) + index


def run_scenario(scenario: Scenario, out_dir=None, seed: int | None = None) -> RunResult:
    """Execute the whole script. Artifacts are written when ``out_dir`` is given."""
    result = Simulation(scenario, seed).run()
    if out_dir is not None:
        result.write(out_dir)
    return result


def default_out_dir(flag: str | None) -> str | None:
    return flag or os.environ.get("TOUCHLINK_LAB_OUT")
