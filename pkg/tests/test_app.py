from cbcast.app import (
    LogApp,
    MainScript,
    ScriptStep,
    delivered_count,
    log_ground_state,
    render_log,
    script_step,
)
from cbcast.protocol import CbcastProcess


def test_log_is_append_only_and_persistent():
    app = LogApp()
    a = app.ground_state()
    b = app.apply_message(a, "x", "A")
    c = app.apply_join(b, "J")
    d = app.apply_removal(c, "B")
    assert a == () and len(b) == 1 and len(d) == 3
    assert render_log(d) == "msg A x\njoin J\nremoval B\n"
    assert delivered_count(d) == 1


def test_start_logs_one_join_per_member():
    p = CbcastProcess()
    p.prot_start(["B", "A"], "A")
    assert render_log(p.state.replicated_data) == "join A\njoin B\n"


def test_script_waits_for_tick_and_deliveries():
    script = MainScript([ScriptStep("a", at_tick=5), ScriptStep("b", after_deliveries=1)])
    log = log_ground_state()
    assert script_step(script, 4, log) is None
    assert script.next_wakeup() == 5
    assert script_step(script, 5, log) == "a"
    assert script_step(script, 6, log) is None
    log = LogApp().apply_message(log, "z", "B")
    assert script_step(script, 6, log, halted=True) is None
    assert script_step(script, 6, log) == "b"
    assert script.exhausted and script.next_wakeup() is None
