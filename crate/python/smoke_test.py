"""Smoke test for the fpb Python module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math
import os
import tempfile

import fpb


def main():
    corpus = fpb.Corpus.synthetic("copy", 300, 10, 2, 6, seed=3)
    train, dev = corpus.split_tail(30)
    assert len(train) == 270 and len(dev) == 30
    src = fpb.Vocab.from_corpus(train, "source")
    tgt = fpb.Vocab.from_corpus(train, "target")
    assert src.decode(src.encode("s1 s2")) == "s1 s2"

    cfg = fpb.Config(16, k_heads=2, k_len=8, dropout_rate=0.0)
    model = fpb.Model(cfg, src, tgt, seed=1)
    assert model.num_params() > 0
    assert any(n.startswith("bow.") for n in model.parameter_names())

    before = model.losses("s1 s2 s3", "s1 s2 s3")
    assert before["bow"] is not None and before["len"] is not None

    out = fpb.train(model, train, dev, epochs=30, batch_size=16, lr=0.01, dev_max_len=10,
                    patience=30, target_dev_bleu=0.95)
    assert not out["diverged"]
    trained = out["model"]
    first, last = out["metrics"][0], out["metrics"][-1]
    assert last["loss_nll"] < first["loss_nll"], (first, last)

    after = trained.losses("s1 s2 s3", "s1 s2 s3")
    assert after["total"] < before["total"]

    hyp = trained.translate("s1 s2 s3", width=1, max_len=10)
    assert hyp == trained.translate("s1 s2 s3", width=1, max_len=10)
    assert trained.translate("", width=3) == ""
    lp = trained.score("s1 s2 s3", hyp)
    assert lp <= 0.0 and math.isfinite(lp)

    steps = trained.predict_future("s1 s2 s3", "s1 s2 s3", top=3)
    assert len(steps) == 4 and steps[0]["input"] == "<s>"
    assert len(steps[0]["bow"]) == 3

    bleu = trained.bleu(dev, width=2, max_len=10)
    assert out["best_dev_bleu"] >= 0.95
    assert 0.5 < bleu <= 1.0
    assert fpb.corpus_bleu(["a b c d"], ["a b c d"]) == 1.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        trained.save(path)
        again = fpb.Model.load(path)
        assert again.translate("s1 s2 s3", width=1, max_len=10) == hyp

    try:
        fpb.Model(fpb.Config(16, k_len=1), src, tgt)
    except ValueError as e:
        assert "k_len" in str(e)
    else:
        raise AssertionError("k_len=1 accepted")

    print(f"ok: dev BLEU {bleu:.3f}, '{hyp}'")


if __name__ == "__main__":
    main()
