import pytest

from lexindex.vocab import Vocabulary


@pytest.fixture
def toy_vocab():
    return Vocabulary.from_tokens(["<unk>", "a", "ab", "b"])


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p
    return _write


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion."""
    name = request.node.name.split("[")[0].replace("test_", "").split("_")[0].upper()
    state = {"detail": ""}

    def note(detail):
        state["detail"] = detail

    yield note
    rep = getattr(request.node, "rep_call", None)
    passed = rep is not None and rep.passed
    ACCEPTANCE[name] = ("PASS" if passed else "FAIL", state["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n[1:])):
        verdict, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {verdict}  {detail}")
