import json

import pytest
import torch

from ecpe.batching import make_batch
from ecpe.corpus import Document, build_vocabulary
from ecpe.synthetic import synthetic_corpus, write_embeddings, write_fixture
from ecpe.training import TrainConfig, build_model

FIGURE1 = [
    "Adele arrived at her apartment late in the afternoon after a long day of work.",
    "She was still furious with her husband for not remembering her 40th birthday.",
    "As soon as she unlocked the door, she gasped with surprise;",
    "Mikhael and Harriet had organized a huge party for her.",
]


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion")
    config._acceptance = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        item.config._acceptance.append((marker.args[0], marker.args[1], status, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(config._acceptance)
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in rows:
        line = f"criterion {number:>2}: {status:4s}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)


@pytest.fixture
def figure1():
    return Document.from_texts("fig1", FIGURE1, [(1, 1), (2, 3)])


@pytest.fixture(scope="session")
def synth50():
    return synthetic_corpus(50, seed=0)


@pytest.fixture(scope="session")
def emb_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("emb") / "embeddings.txt"
    write_embeddings(path, seed=0)
    return path


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    write_fixture(out, n_docs=60, seed=3)
    return out


def tiny_config(**kw):
    base = dict(embed_dim=6, h_w=4, h_c=4, d_p=4, hidden_p=5, dtype="float64", seed=11)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def tiny():
    """A float64 d=3, 4-token fixture with h_w = h_c = 4 and its batch."""
    doc = Document.from_texts("tiny", ["a b c d", "e f g a", "b c e h"], [(0, 1), (2, 2)])
    vocab = build_vocabulary([doc])
    # at U(-0.1, 0.1) attention gradients (~1e-10) sit below the finite-difference roundoff floor
    config = tiny_config(init_bound=1.0)
    model = build_model(config, len(vocab))
    model.eval()
    return model, make_batch([doc], vocab), config, doc, vocab


def read_jsonl(path):
    return [json.loads(l) for l in open(path, encoding="utf-8") if l.strip()]


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
