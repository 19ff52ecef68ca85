"""Socket-level integration: a real uvicorn process serving the primary's
RemoteReader, address scraped from the startup line."""

import subprocess
import sys
import time

import numpy as np
import pytest
import requests

from ragfuse.reader import RemoteReader, SimulatedReader, SimulatedReaderParams
from ragfuse.types import ClassVocab, IndexRecord, Query, make_label_ref


@pytest.fixture(scope="module")
def live_server():
    proc = subprocess.Popen(
        [sys.executable, "-m", "reader_server", "--port", "0", "--seed", "42"],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    line = proc.stdout.readline().strip()
    assert line.startswith("listening on "), line
    endpoint = line.split()[-1]
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline:
        try:
            if requests.get(f"{endpoint}/healthz", timeout=1).status_code == 200:
                break
        except requests.RequestException:
            time.sleep(0.05)
    else:
        proc.kill()
        pytest.fail("server never became healthy")
    yield endpoint
    proc.terminate()
    proc.wait(timeout=10)


class TestLiveServer:
    def test_remote_reader_agrees_with_simulated(self, live_server):
        remote = RemoteReader(live_server, timeout=5)
        sim = SimulatedReader(SimulatedReaderParams(seed=42))
        vocab = ClassVocab(("a", "b", "c"))
        rng = np.random.default_rng(1)
        for i in range(25):
            gold = vocab.labels[int(rng.integers(3))]
            cand = vocab.labels[int(rng.integers(3))]
            query = Query(f"q{i}", [1.0], "?", gold, vocab,
                          payload_ref=make_label_ref(f"q/{i}", gold))
            record = IndexRecord(i, [1.0], [1.0],
                                 make_label_ref(f"r/{i}", cand, gold), "t")
            got = remote.score_candidate(query, record, vocab)
            expected = sim.score_candidate(query, record, vocab)
            np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_health_endpoint(self, live_server):
        assert RemoteReader(live_server, timeout=5).healthy()

    def test_malformed_gets_400_over_socket(self, live_server):
        resp = requests.post(f"{live_server}/score", json={"nope": 1}, timeout=5)
        assert resp.status_code == 400
