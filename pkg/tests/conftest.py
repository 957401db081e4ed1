import pytest

from protmeas.runner import load_preset, run_command

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture(scope="session")
def preset_envelope():
    """Run a bundled preset once per session and hand out its envelope."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_command(load_preset(name))
        return cache[name]

    get.cache = cache
    return get


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion: its line is printed in the terminal summary."""
    results = request.config.stash[ACCEPTANCE]

    def judge(number, title, checks):
        ok = all(passed for _, _, passed in checks)
        detail = "; ".join(f"{label} = {value:.6g}" if isinstance(value, float) else f"{label} = {value}"
                           for label, value, _ in checks)
        results[number] = (title, ok, detail)
        failed = [label for label, _, passed in checks if not passed]
        assert not failed, f"criterion {number} failed on: {', '.join(failed)} ({detail})"

    return judge


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number}. {title}: {detail}")
