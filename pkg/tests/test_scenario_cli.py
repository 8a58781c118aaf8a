import re
from pathlib import Path

import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from touchlink_lab import cli
from touchlink_lab.devices.profiles import PROFILES
from touchlink_lab.scenario import (
    VERBS,
    Action,
    ExpectationFailed,
    NetworkSpec,
    NodeSpec,
    ParseError,
    Scenario,
    ValidationError,
    load_scenario,
    parse_scenario,
    run_scenario,
    serialize_scenario,
    validate,
)

SCENARIOS = sorted((Path(__file__).parent.parent / "scenarios").glob("*.scn"))
HIJACK = next(p for p in SCENARIOS if p.name == "hue-hijack.scn")

BASE = """\
[scenario]
name = t
seed = 1
master_key = 9f5595f10257c8a469cbbd15e4e3ac6b

[networks]
home: pan=0x1a2b ext_pan=0x00178801aabbccdd channel=11 key=random

[nodes]
bridge: profile=hue-bridge x=0.0 y=0.0 network=home
bulb1: profile=hue-bulb x=1.0 y=0.0
eve: profile=attacker x=5.0 y=0.0 tx=26.0 master_key=shared

[script]
"""


def write(tmp_path, text, name="s.scn"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- round trip ----------------------------------------------------------------------

ident = st.from_regex(r"[A-Za-z][A-Za-z0-9_-]{0,8}", fullmatch=True)
token = st.from_regex(r"[A-Za-z0-9_.,:-]{1,10}", fullmatch=True)
hex32 = st.from_regex(r"[0-9a-f]{32}", fullmatch=True)
finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
maybe = st.none().__or__

networks = st.builds(
    NetworkSpec,
    ident,
    st.integers(0, 0xFFFF),
    st.integers(0, 2**64 - 1),
    st.integers(11, 26),
    st.one_of(st.just("random"), hex32),
    st.integers(0, 255),
)
nodes = st.builds(
    NodeSpec,
    ident,
    st.sampled_from(sorted(PROFILES) + ["attacker"]),
    finite,
    finite,
    finite,
    maybe(ident),
    maybe(st.integers(0, 0xFFFF)),
    maybe(st.integers(0, 2**64 - 1)),
    maybe(st.integers(11, 26)),
    maybe(ident),
    maybe(st.one_of(st.just("shared"), hex32)),
    maybe(st.integers(0, 10**6)),
)
params = st.dictionaries(ident.filter(lambda k: k != "at"), token, max_size=4).map(lambda d: tuple(d.items()))
actions = st.builds(Action, st.sampled_from(VERBS), params, maybe(st.integers(0, 10**9)))
scenarios = st.builds(
    Scenario,
    ident,
    st.integers(0, 2**64 - 1),
    hex32,
    st.dictionaries(st.sampled_from(["reference_loss_db", "exponent", "noise_floor_dbm"]), finite).map(
        lambda d: tuple(d.items())
    ),
    st.lists(networks, max_size=3, unique_by=lambda n: n.name).map(tuple),
    st.lists(nodes, max_size=5, unique_by=lambda n: n.node_id).map(tuple),
    st.lists(actions, max_size=6).map(tuple),
)


@settings(max_examples=300, suppress_health_check=[HealthCheck.too_slow])
@given(scenarios)
def test_serialize_parse_round_trip(scenario):
    text = serialize_scenario(scenario)
    assert parse_scenario(text) == scenario
    assert serialize_scenario(parse_scenario(text)) == text


@pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
def test_bundled_scenarios_round_trip(path):
    s = load_scenario(path)
    assert parse_scenario(serialize_scenario(s)) == s


# -- parse errors ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("[scenario]\nname = x\n[bogus]\n", 3, 1),
        ("name = x\n", 1, 1),
        ("[scenario]\n  seed = ten\n", 2, 10),
        ("[nodes]\nb1: profile=hue-bulb x=one\n", 2, 22),
        ("[nodes]\nb1: profile=hue-bulb\tcolour=red\n", 2, 22),
        ("[nodes]\n  b1: profile=hue-bulb x\n", 2, 24),
        ("[nodes]\nb1: x=1\n", 2, 1),
        ("[networks]\nhome: pan=1 channel=11\n", 2, 1),
        ("[script]\n\n  dance target=bulb\n", 3, 3),
        ("[script]\njoin initiator=a initiator=b\n", 2, 18),
        ("[path_loss]\nexponent = inf\n", 2, 12),
    ],
)
def test_parse_error_positions(text, line, column):
    with pytest.raises(ParseError) as err:
        parse_scenario(text)
    assert (err.value.line, err.value.column) == (line, column)
    assert str(err.value).startswith(f"line {line}, column {column}: ")


def test_comments_and_blank_lines():
    s = parse_scenario("# hi\n\n[scenario]  # trailing\nname = x # c\nseed = 0x10\n")
    assert (s.name, s.seed) == ("x", 16)


# -- validation -----------------------------------------------------------------------


@pytest.mark.parametrize(
    "extra, field",
    [
        ("", None),
        ("[networks]\nwork: pan=1 ext_pan=2 channel=27\n", "networks.work.channel"),
        ("[nodes]\nb2: profile=hue-bulb channel=10\n", "nodes.b2.channel"),
        ("[nodes]\nb2: profile=ikea-bulb\n", "nodes.b2.profile"),
        ("[nodes]\nb2: profile=hue-bulb network=nowhere\n", "nodes.b2.network"),
        ("[script]\njoin initiator=bulb1\n", "script.1.initiator"),
        ("[script]\nattack kind=dos-channel attacker=eve target=bulb1 channel=27\n", "script.1.channel"),
        ("[script]\nattack kind=nuke attacker=eve\n", "script.1.kind"),
        ("[script]\nadvance s=1 at=100\nadvance s=1 at=50\n", "script.2.at"),
    ],
)
def test_validation(extra, field):
    text = BASE.replace("[script]\n", "") + extra
    if field is None:
        validate(parse_scenario(text))
        return
    with pytest.raises(ValidationError) as err:
        validate(parse_scenario(text))
    assert err.value.field == field


def test_load_scenario_rejects_channel_27(tmp_path):
    text = BASE.replace("channel=11", "channel=27")
    with pytest.raises(ValidationError) as err:
        load_scenario(write(tmp_path, text))
    assert err.value.field == "networks.home.channel"


# -- runner ---------------------------------------------------------------------------


def test_run_result_and_outputs(tmp_path):
    result = run_scenario(load_scenario(HIJACK), tmp_path / "out")
    assert result.ok
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"events.log", "states.txt", "report.txt"}
    events = (out / "events.log").read_text().splitlines()
    assert all(re.match(r"(tx|rx|drop|state|note) ", line) for line in events)
    states = (out / "states.txt").read_text()
    assert states.startswith("== before 1 join ")
    assert "expect line=" in (out / "report.txt").read_text()


def test_failed_expectation_is_reported(tmp_path):
    text = BASE + "join initiator=bridge target=bulb1\nexpect node=bulb1 factory_new=1\n"
    result = run_scenario(load_scenario(write(tmp_path, text)))
    assert not result.ok
    assert "expect line=16 FAILED" in result.report_text()
    with pytest.raises(ExpectationFailed, match="line 16"):
        result.check()


def test_seed_override_changes_keys(tmp_path):
    s = load_scenario(HIJACK)
    a = run_scenario(s).states
    b = run_scenario(s, seed=s.seed + 1).states
    assert a != b


# -- CLI ------------------------------------------------------------------------------


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
def test_bundled_scenarios_pass(capsys, path):
    code, out, _ = run_cli(capsys, "run", "--scenario", path)
    assert code == cli.EXIT_OK, out
    assert "FAILED" not in out


def test_run_failed_expectation_exits_2(tmp_path, capsys):
    path = write(tmp_path, BASE + "expect node=bulb1 factory_new=0\n")
    code, _, err = run_cli(capsys, "run", "--scenario", path)
    assert code == cli.EXIT_FAILED
    assert "expectation failed: line 15" in err


def test_blink_reports_effective_duration(capsys):
    code, out, _ = run_cli(capsys, "blink", "--scenario", HIJACK, "--duration", "0xFFFE", "--target", "0x0017880100000002")
    assert code == cli.EXIT_OK
    assert "verdict: success" in out
    assert "effective: 65534 s" in out


def test_extract_key_without_join_exits_2(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "extract-key", "--scenario", write(tmp_path, BASE))
    assert code == cli.EXIT_FAILED
    assert "verdict: failure" in out
    assert "error: IncompleteCapture" in out


def test_extract_key_after_join(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "extract-key", "--scenario", write(tmp_path, BASE + "join initiator=bridge target=bulb1\n")
    )
    assert code == cli.EXIT_OK
    assert "verdict: success" in out


def test_hijack_without_master_key_is_usage_error(tmp_path, capsys):
    path = write(tmp_path, BASE.replace(" master_key=shared", ""))
    code, _, err = run_cli(capsys, "hijack", "--scenario", path, "--target", "bulb1")
    assert code == cli.EXIT_USAGE
    assert "master key" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fly"],
        ["blink", "--scenario", str(HIJACK)],
        ["blink", "--scenario", str(HIJACK), "--target", "bulb1", "--attacker", "mallory"],
        ["blink", "--scenario", str(HIJACK), "--target", "nobody"],
        ["dos-channel", "--scenario", str(HIJACK), "--target", "bulb1", "--channel", "27"],
        ["run", "--scenario", "/nonexistent/x.scn"],
        ["run", "--scenario", str(HIJACK), "--seed", "-1"],
        ["inject", "--scenario", str(HIJACK), "--key", "00", "--pan", "1", "--channel", "11", "--command", "on"],
    ],
)
def test_usage_errors_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        raise SystemExit(cli.main(argv))
    assert exc.value.code == cli.EXIT_USAGE


def test_out_directory_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TOUCHLINK_LAB_OUT", str(tmp_path / "env"))
    code, _, _ = run_cli(capsys, "run", "--scenario", HIJACK)
    assert code == 0
    assert (tmp_path / "env" / "events.log").exists()
    code, _, _ = run_cli(capsys, "run", "--scenario", HIJACK, "--out", tmp_path / "flag")
    assert (tmp_path / "flag" / "report.txt").exists()


def test_range_writes_table_and_figure(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "range", "--out", tmp_path)
    assert code == 0
    rows = [line.split("\t") for line in out.splitlines()]
    assert rows[0][0] == "profile" and len(rows) == 4
    assert (tmp_path / "range.tsv").read_text() == out
    png = (tmp_path / "range.png").read_bytes()
    assert png.startswith(b"\x89PNG") and len(png) > 10_000


def test_attack_output_is_deterministic(tmp_path, capsys):
    runs = []
    for i in range(2):
        run_cli(capsys, "hijack", "--scenario", HIJACK, "--target", "bulb1", "--out", tmp_path / str(i))
        runs.append((tmp_path / str(i) / "events.log").read_bytes())
    assert runs[0] == runs[1]


# -- robustness -----------------------------------------------------------------------

BASE_LINES = (BASE + "join initiator=bridge target=bulb1\nattack kind=blink attacker=eve target=bulb1\n").splitlines()
junk = st.text(alphabet="abcxyz019=:#[] .-_\t", max_size=20)


@st.composite
def mutated(draw):
    lines = list(BASE_LINES)
    for _ in range(draw(st.integers(1, 3))):
        i = draw(st.integers(0, len(lines) - 1))
        op = draw(st.sampled_from(["delete", "replace", "insert", "splice"]))
        if op == "delete":
            del lines[i]
        elif op == "replace":
            lines[i] = draw(junk)
        elif op == "insert":
            lines.insert(i, draw(junk))
        else:
            cut = draw(st.integers(0, len(lines[i])))
            lines[i] = lines[i][:cut] + draw(junk) + lines[i][cut:]
        if not lines:
            lines = [""]
    return "\n".join(lines) + "\n"


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(mutated(), st.sampled_from(["run", "blink", "extract-key"]))
def test_malformed_scenarios_exit_cleanly(tmp_path, capsys, text, command):
    path = write(tmp_path, text)
    argv = [command, "--scenario", path] + (["--target", "bulb1"] if command == "blink" else [])
    try:
        code = cli.main(argv)
    except SystemExit as exc:  # argparse
        code = exc.code
    capsys.readouterr()
    assert code in (cli.EXIT_OK, cli.EXIT_USAGE, cli.EXIT_FAILED)


@settings(max_examples=200)
@given(st.text(max_size=200))
def test_parser_only_raises_parse_errors(text):
    assume("\x00" not in text)
    try:
        parse_scenario(text)
    except ParseError as err:
        assert err.line >= 1 and err.column >= 1
