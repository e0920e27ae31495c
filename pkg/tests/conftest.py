from pathlib import Path

import pytest
import torch

from tablelink.nn_core import EncoderModel, ModelConfig, Vocab
from tablelink.table_model import Table

MICRO = Path(__file__).resolve().parents[1] / "data" / "micro"

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def micro_dir():
    return MICRO


def toy_model(words=(), d=8, layers=2, heads=2, ff=16, max_len=16, seed=0, dtype="float64", **kw):
    vocab = Vocab.build(words)
    config = ModelConfig(len(vocab), d=d, layers=layers, heads=heads, ff=ff, max_seq_len=max_len,
                         max_table_tokens=kw.pop("max_table_tokens", max_len), seed=seed, dtype=dtype)
    return EncoderModel(config, vocab)


@pytest.fixture
def grid2x2():
    return Table(
        "t",
        cells=[["alpha", "beta"], ["gamma", "delta"]],
        headers=["h zero", "h one"],
        caption="the caption",
        page_title="page",
        gold_links={(0, 0): "q1"},
    )


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
