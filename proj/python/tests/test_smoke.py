import json
import os
from pathlib import Path

import pytest

import ppr

SRC = Path(os.environ.get("PPR_SOURCE_DIR", Path(__file__).resolve().parents[2]))
CORPUS = str(SRC / "data" / "synthetic_10users.jsonl")


@pytest.fixture(scope="module")
def corpus():
    return ppr.Corpus.load(CORPUS)


def test_rouge_worked_case():
    assert ppr.rouge_l("the cat", "the cat sat") == pytest.approx(52 / 77, abs=1e-12)
    assert ppr.tokenize("The CAT, sat!") == ["the", "cat", "sat"]


def test_corpus_and_split(corpus):
    assert len(corpus) == 10
    assert corpus.record_count() == 273
    manifest = ppr.split(corpus, 3)
    assert manifest == ppr.split(corpus, 3)
    assert all(len(ids) == 2 for ids in manifest["test"].values())
    for user, ids in manifest["test"].items():
        assert not set(ids) & set(manifest["train"][user])


def test_retrieve_and_rewrite(corpus):
    user = corpus.user_ids()[0]
    rid, prompt = corpus.history(user)[4]
    top = ppr.retrieve(corpus, user, prompt, method="ebr", k=3)
    assert len(top) == 3
    assert top[0].score == pytest.approx(1.0, abs=1e-6)
    assert [r.rank for r in top] == [1, 2, 3]
    held = ppr.retrieve(corpus, user, prompt, method="bm25", k=5, exclude={rid})
    assert rid not in [r.record_id for r in held]

    out = ppr.rewrite(corpus, user, "a castle", k=2)
    assert out.mode == "personalized:ebr:1"
    assert len(out.retrieved) == 2
    assert out.text.startswith("a castle")
    assert ppr.rewrite(corpus, user, "a castle", mode="passthrough").text == "a castle"


def test_keywords_and_arms(corpus):
    kw = ppr.keywords(corpus, n=5)
    assert len(kw) == 5
    assert [w for _, w in kw] == sorted((w for _, w in kw), reverse=True)
    arms = [ppr.assign_arm("u", f"r{i}", 1) for i in range(2000)]
    assert set(arms) == {"original", "personalized"}
    assert abs(arms.count("personalized") / 2000 - 0.5) < 0.05


def test_errors_and_cli(corpus):
    with pytest.raises(KeyError):
        ppr.retrieve(corpus, "nobody", "x")
    with pytest.raises(ValueError):
        ppr.shorten("a cat", "paragraph")
    code, out, _ = ppr.run_cli(["stats", "--corpus", CORPUS])
    assert code == 0
    assert json.loads(out)["users"] == 10
    assert ppr.run_cli(["stats"])[0] == 1
