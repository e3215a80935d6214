import numpy as np
import pytest

from atnk.model import ModelConfig, Seq2Seq
from atnk.tasks import total_vocab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**kw) -> ModelConfig:
    base = dict(tgt_vocab=total_vocab(4), src_vocab=total_vocab(4), hidden=3, d_emb=2, d_a=3, K=3)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    return Seq2Seq(tiny_config(), seed=7)


@pytest.fixture
def tiny_location_model():
    return Seq2Seq(tiny_config(attention="location"), seed=7)


# acceptance bookkeeping: every test marked ``criterion(n, title)`` contributes
# to one PASS/FAIL line per criterion in the terminal summary
_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.fixture
def note(request):
    """Attach a short measurement to the current test's criterion line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _VERDICTS.setdefault(marker.args[0], [marker.args[1], [], []])[2].append(text)

    return add


def pytest_deselected(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _VERDICTS.setdefault(marker.args[0], [marker.args[1], [], []])[1].append(None)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    entry = _VERDICTS.setdefault(marker.args[0], [marker.args[1], [], []])
    entry[1].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        title, results, notes = _VERDICTS[number]
        if False in results or not results:
            status = "FAIL"
        elif None in results:
            status = "INCOMPLETE"  # some of its tests were deselected
        else:
            status = "PASS"
        detail = f" ({'; '.join(notes)})" if notes else ""
        terminalreporter.write_line(f"{status} criterion {number}: {title}{detail}")
