import json
import os
import subprocess

import numpy as np
import pytest

import lpr_engine as lpr


def write_corpus(tmp_path, n=30):
    passages, queries = [], []
    for i in range(n):
        text = f"passage {i} about doctrine{i} and remedy{i * 7 % 11} under statute{i % 5}"
        passages.append({"id": f"p{i}", "text": text})
        queries.append({"qid": f"q{i}", "context": f"doctrine{i} remedy{i * 7 % 11}", "target_id": f"p{i}"})
    p = tmp_path / "passages.jsonl"
    q = tmp_path / "queries.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in passages))
    q.write_text("".join(json.dumps(r) + "\n" for r in queries))
    return p, q


def test_tokenize():
    assert lpr.tokenize("The Court's ruling, 2019!") == ["the", "court", "s", "ruling", "2019"]
    assert lpr.tokenize("courts hopping", stem=True) == ["court", "hop"]


def test_bm25_search_and_idf():
    idx = lpr.Bm25Index([("a", "contract breach damages"), ("b", "zoning variance"), ("c", "contract law")])
    hits = idx.search("breach of contract", k=2)
    assert [h[0] for h in hits] == ["a", "c"]
    assert hits[0][1] > hits[1][1] > 0
    assert idx.n_docs == 3
    assert idx.idf("zoning") == pytest.approx(np.log(1 + 2.5 / 1.5))


def test_metrics():
    assert lpr.bleu(["a b c d"], ["a b c d"]) == 1.0
    assert lpr.rouge_l("a b c d", "a c d e")[2] == pytest.approx(0.75)
    assert lpr.top_share([8, 1, 1], 1 / 3) == 0.8
    r = lpr.paired_t_test([0.1, 0.4, 0.3, 0.9], [0.2, 0.1, 0.3, 0.5])
    assert 0.0 < r["p"] < 1.0 and r["n"] == 4


def test_rewrite_helpers():
    assert lpr.parse_cot_output("steps <output> final </output>") == ("final", True)
    assert lpr.strip_scaffolding("text\n\n### Preceding Context : x") == "text"
    assert lpr.gure_prompt("ctx").endswith("### Preceding Context : ctx\n\n### Legal Passage :")


def test_embeddings_round_trip(tmp_path):
    m = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "x.emb"
    lpr.write_embeddings(path, m)
    back, normalized = lpr.read_embeddings(path)
    assert not normalized
    np.testing.assert_array_equal(back, m)
    assert path.stat().st_size == 13 + 12 * 4
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(lpr.FormatError):
        lpr.read_embeddings(path)


def test_run_experiment(tmp_path):
    p, q = write_corpus(tmp_path)
    settings = {
        "passages": str(p),
        "queries": str(q),
        "out_dir": str(tmp_path / "out"),
        "train_fraction": "0.5",
        "sampling.n": "0",
        "sampling.trials": "2",
    }
    r = lpr.run_experiment(settings)
    assert r["mean"]["recall_at_1"] == 1.0
    assert len(r["per_trial"]) == 2
    assert r["config_hash"] == lpr.config_hash(settings)
    assert all(os.path.exists(f) for f in r["run_files"])
    with pytest.raises(lpr.ConfigError):
        lpr.run_experiment({**settings, "bogus": "1"})


@pytest.mark.skipif("LPR_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_stats(tmp_path):
    p, q = write_corpus(tmp_path, n=5)
    out = subprocess.run([os.environ["LPR_CLI"], "stats", "--passages", str(p), "--queries", str(q)],
                         check=True, capture_output=True, text=True).stdout
    stats = json.loads(out)
    assert stats["n_passages"] == 5 and stats["n_queries"] == 5
