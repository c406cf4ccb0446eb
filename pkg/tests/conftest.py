import pytest

from gtprune.config import RunConfig

# tiny runs: a few seconds each
TINY = dict(synth_count=60, hidden_dim=16, num_heads=2, ffn_dim=16, epochs=3, batch_size=16)

_RESULTS_KEY = pytest.StashKey[dict]()


@pytest.fixture
def tiny_config():
    def make(**kw):
        return RunConfig.from_dict({**TINY, **kw})

    return make


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record and assert an acceptance criterion outcome."""

    def record(number: int, ok: bool, detail: str) -> None:
        request.config.stash[_RESULTS_KEY][number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
