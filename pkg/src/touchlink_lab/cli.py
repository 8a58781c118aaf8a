"""Command-line entry point.

Exit status: 0 on success, 2 when an attack fails or an expectation does
not hold, 1 on usage, parse and validation errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import attacks
from .airsim import DEFAULT_MODEL
from .scenario import Action, ScenarioError, Simulation, default_out_dir, load_scenario, validate_action

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"{text} is not a 64-bit unsigned value")
    return value


def _common(p: argparse.ArgumentParser, scenario_required: bool = True) -> None:
    p.add_argument("--scenario", required=scenario_required, help="scenario file")
    p.add_argument("--out", help="output directory (default: $TOUCHLINK_LAB_OUT)")
    p.add_argument("--seed", type=_u64, help="override the scenario seed")


def _attack_parser(sub, name: str, help_text: str, target: bool = True) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text)
    _common(p)
    p.add_argument("--attacker", help="attacker node id (default: the first attacker in the scenario)")
    if target:
        p.add_argument("--target", required=True, help="node id or extended address")
        p.add_argument("--channels", help="comma-separated scan channels (default 11,15,20,25)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="touchlink-lab", description="Simulated touchlink commissioning and attacks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="execute a scenario script and check its expectations")
    _common(p)

    p = _attack_parser(sub, "scan", "active touchlink scan", target=False)
    p.add_argument("--channels", help="comma-separated scan channels (default 11,15,20,25)")

    p = _attack_parser(sub, "blink", "identify request with a long duration")
    p.add_argument("--duration", default="0xFFFE", help="identify duration in seconds, 16 bit (default 0xFFFE)")

    _attack_parser(sub, "reset", "reset to factory new")

    p = _attack_parser(sub, "dos-channel", "network update to another channel")
    p.add_argument("--channel", required=True)
    p.add_argument("--update-id", help="network update id (default: advertised + 1)")
    p.add_argument("--bridge", help="bridge node used to confirm the bulb is unreachable")

    p = _attack_parser(sub, "dos-join", "join a phantom network with a random key")
    p.add_argument("--channel")
    p.add_argument("--bridge", help="bridge node used to confirm the bulb is unreachable")

    p = _attack_parser(sub, "hijack", "join the target to the attacker's network")
    p.add_argument("--key", help="attacker network key, 32 hex digits (default: random)")
    p.add_argument("--channel")
    p.add_argument("--pan")

    p = _attack_parser(sub, "extract-key", "decrypt the network key from sniffed touchlink frames", target=False)
    p.add_argument("--transaction-id", help="pick one exchange when several were captured")

    p = _attack_parser(sub, "inject", "send an encrypted lamp command", target=False)
    p.add_argument("--key", required=True, help="network key, 32 hex digits")
    p.add_argument("--pan", required=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--command", required=True, choices=("on", "off", "toggle", "level", "color"))
    p.add_argument("--value", help="level (0-255) or hue (0-65535)")
    p.add_argument("--dst", default="broadcast", help="node id, short address or 'broadcast'")

    p = sub.add_parser("range", help="tabulate and plot maximum touchlink distances")
    _common(p, scenario_required=False)
    p.add_argument("--tx", type=float, default=attacks.RANGE_EVAL_TX_DBM, help="attacker transmit power in dBm")
    p.add_argument("--legit-tx", type=float, default=0.0, help="legitimate initiator transmit power in dBm")
    return parser


_ATTACK_FLAGS = (
    "target", "channels", "duration", "channel", "update_id", "bridge",
    "key", "pan", "transaction_id", "command", "value", "dst",
)


def _attack_action(args, attacker: str) -> Action:
    params = [("kind", args.command), ("attacker", attacker)]
    for name in _ATTACK_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            params.append((name, str(value)))
    return Action("attack", tuple(params))


def _pick_attacker(sim: Simulation, requested: str | None) -> str:
    names = [n.node_id for n in sim.attackers()]
    if requested is not None:
        if requested not in names:
            raise UsageError(f"no attacker node named {requested!r}")
        return requested
    if not names:
        raise UsageError("the scenario has no attacker node")
    return names[0]


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    sim = Simulation(scenario, args.seed)
    result = sim.run()
    out = default_out_dir(args.out)
    if out:
        result.write(out)
    sys.stdout.write(result.report_text())
    if result.failures:
        action, msg = result.failures[0]
        print(f"expectation failed: line {action.line}: {action.text()}: {msg}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _cmd_attack(args) -> int:
    scenario = load_scenario(args.scenario)
    sim = Simulation(scenario, args.seed)
    attacker = _pick_attacker(sim, args.attacker)
    action = _attack_action(args, attacker)
    validate_action(scenario, action, "flags")
    setup = []
    for a in scenario.script:
        if a.verb == "attack":
            break
        if a.verb != "expect":
            setup.append(a)
    sim.run(setup)
    try:
        sim.execute(action, len(setup) + 1)
    except attacks.MasterKeyRequired as exc:
        raise UsageError(str(exc)) from None
    result = sim.result()
    out = default_out_dir(args.out)
    if out:
        result.write(out)
    outcome = sim.reports[-1]
    sys.stdout.write(outcome.report())
    return EXIT_OK if outcome.success else EXIT_FAILED


def _cmd_range(args) -> int:
    from . import plotting

    model = load_scenario(args.scenario).model() if args.scenario else DEFAULT_MODEL
    rows = plotting.range_rows(model, args.legit_tx, args.tx)
    table = plotting.range_table(rows)
    sys.stdout.write(table)
    out = default_out_dir(args.out)
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "range.tsv").write_text(table)
        plotting.plot_range(model, rows, out / "range.png")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "range":
            return _cmd_range(args)
        return _cmd_attack(args)
    except (ScenarioError, UsageError, OSError) as exc:
        print(f"touchlink-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
