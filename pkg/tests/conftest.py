import numpy as np
import pytest

from preflab.envs import EnvAction, make_env
from preflab.experience import ReplayBuffer, Segment, Transition

_ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(num, name): one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call":
        return
    num, name = marker.args
    if hasattr(report, "wasxfail"):
        status = "FAIL (expected; see decisions ledger)" if report.skipped else "XPASS"
    elif report.passed:
        status = "PASS"
    elif report.failed:
        status = "FAIL"
    else:
        status = "SKIPPED"
    _ACCEPTANCE_RESULTS.setdefault((num, name), []).append(status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (num, name), statuses in sorted(_ACCEPTANCE_RESULTS.items()):
        order = {"FAIL": 0, "XPASS": 1, "FAIL (expected; see decisions ledger)": 2,
                 "SKIPPED": 3, "PASS": 4}
        worst = min(statuses, key=lambda s: order[s])
        terminalreporter.write_line(f"criterion {num:>2} ({name}): {worst}")


def make_segment(states, actions, episode="ep-test", start=0) -> Segment:
    return Segment(np.asarray(states, dtype=float), np.asarray(actions, dtype=float),
                   episode, start)


def random_segment(rng, h=5, ds=3, da=2, episode="ep-test", start=0) -> Segment:
    return Segment(rng.normal(size=(h, ds)), rng.normal(size=(h, da)), episode, start)


def fill_buffer_random(env, steps, seed=0, capacity=50000) -> ReplayBuffer:
    """Random-policy rollouts pushed with zero learned reward."""
    rng = np.random.default_rng(seed)
    buffer = ReplayBuffer(capacity)
    actions = env.policy_actions
    state = None
    for _ in range(steps):
        if state is None or state.terminal:
            state = env.reset()
            buffer.start_episode()
        raw = actions[int(rng.integers(len(actions)))]
        a = env.encode_action(raw)
        nxt, r, done = env.step(EnvAction(raw))
        buffer.push(Transition(state.features, a, nxt.features, 0.0, r))
        state = nxt
    return buffer


@pytest.fixture
def grid_env():
    return make_env("grid-hazard", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
