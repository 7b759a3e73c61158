import random

import pytest

from cbcast.core import ScenarioError
from cbcast.scenario import (
    Directive,
    donation_scenarios,
    generate_scenario,
    generate_scenarios,
    load_scenario,
    parse_scenario,
    with_seed,
)

BASE = "roster = A B C\n"


def test_parse_round_trip(data_dir):
    sc = load_scenario(data_dir / "golden.scn")
    again = parse_scenario(sc.render())
    assert again == sc and again.digest() == sc.digest()


def test_parse_all_statements():
    sc = parse_scenario(
        "name = t  # comment\nseed = 9\nmax_ticks = 100\nmain_delay = 2\nroster = A B C\n"
        "at 1 broadcast A hi after 2\nat 3 join J parent B\nat 4 remove C\nat 5 halt C\n"
        "drop C A from 2\ndrop-notification C 2\n"
    )
    assert (sc.name, sc.seed, sc.max_ticks, sc.main_delay) == ("t", 9, 100, 2)
    assert sc.directives[0] == Directive(1, "broadcast", "A", payload="hi", after=2)
    assert sc.directives[1] == Directive(3, "join", "J", parent="B")
    assert sc.packet_drops == [("C", "A", 2)] and sc.notification_drops == [("C", 2)]
    assert [d.pid for d in sc.view_changes()] == ["J", "C"]


@pytest.mark.parametrize(
    "text",
    [
        "",
        "roster = A A\n",
        "roster = A\ncolour = red\n",
        BASE + "at x broadcast A m\n",
        BASE + "at 1 broadcast A\n",
        BASE + "at 1 explode A\n",
        BASE + "at 1 join J B\n",
        BASE + "at 1 broadcast Z m\n",
        BASE + "at 1 halt A\n",  # halting process never removed
        BASE + "drop A B from 1\n",  # neither end is faulty
        BASE + "drop C A from 0\n",
        BASE + "at 2 remove C\ndrop-notification A 1\n",  # A never halts
        BASE + "at 2 remove C\ndrop-notification C 5\n",  # C never sees view 5
        BASE + "at 1 remove A\nat 2 remove B\nat 3 remove C\n",  # empties the group
        BASE + "frobnicate\n",
    ],
)
def test_invalid_scenarios_rejected(text):
    with pytest.raises(ScenarioError):
        parse_scenario(text)


def test_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario("/nonexistent/x.scn")


def test_generator_is_deterministic_and_conforming():
    a = [s.render() for s in generate_scenarios(5, 30)]
    b = [s.render() for s in generate_scenarios(5, 30)]
    assert a == b
    assert a != [s.render() for s in generate_scenarios(6, 30)]
    for text in a:
        parse_scenario(text)  # validates


def test_generator_never_halts_parents():
    for sc in generate_scenarios(3, 100):
        parents = {d.parent for d in sc.directives if d.verb == "join"}
        assert not parents & {d.pid for d in sc.directives if d.verb == "halt"}


def test_donation_scenarios_have_a_joiner():
    for sc in donation_scenarios(1, 10):
        joins = [d for d in sc.directives if d.verb == "join"]
        assert [d.pid for d in joins] == ["p90"]


def test_with_seed_changes_only_seed():
    sc = generate_scenario(random.Random(0), 0)
    other = with_seed(sc, 123)
    assert other.seed == 123 and other.directives == sc.directives
