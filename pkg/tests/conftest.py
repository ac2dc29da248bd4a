import json

import pytest

TINY = {
    "system": {"N_t": 4, "K": 2, "L": 2, "N_b": 2, "encoder_hidden": [16, 16],
               "decoder_hidden": [16, 16]},
    "training": {"batch_size": 16, "total_batches": 30, "eval_interval": 10},
    "sweep": {"n_test": 200, "testset_seed": 11},
}


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
