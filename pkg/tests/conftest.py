import pytest

from cpsfalsify import experiments
from cpsfalsify.config import load_yaml, shipped_config


@pytest.fixture(scope="session")
def toy():
    """The shipped well-trained scene classifier: (model, train, test)."""
    return experiments.train_classifier(load_yaml(shipped_config("classifier.yaml")))


@pytest.fixture(scope="session")
def weak_model():
    from cpsfalsify.config import model_from
    return model_from(load_yaml(shipped_config("weak_demo.yaml"))["model"])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
