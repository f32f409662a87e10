"""Train the joint embedding on a synthetic corpus and watch it overfit.

Run: python3 demos/05_train_toy.py        (about half a minute on CPU)
"""

import os
import tempfile

from moltext.data import AugmentationConfig, load_corpus
from moltext.encoders import ModelConfig
from moltext.losses import LossConfig
from moltext.simindex import build_topk
from moltext.toydata import make_corpus, write_corpus_jsonl
from moltext.train import TrainConfig, train

with tempfile.TemporaryDirectory() as tmp:
    # 32 molecules, two paraphrased descriptions each, unique tag words.
    records = make_corpus(32, descriptions_per_molecule=2, seed=1)
    corpus_path = os.path.join(tmp, "corpus.jsonl")
    write_corpus_jsonl(corpus_path, records)
    corpus = load_corpus(corpus_path, radius=2, nbits=512)
    print("example description:", records[0]["descriptions"][0])

    # Description sharing needs the structural neighbor lists.
    index = build_topk(corpus.fingerprints(), k=3)

    # The text regularizer chases a frozen copy of its own output, so the
    # step size needs a ceiling: clip gradients and decay the learning rate.
    cfg = TrainConfig(
        epochs=250,
        batch_size=16,
        learning_rate=1e-3,
        grad_clip=1.0,
        lr_schedule="cosine",
        mode="amole",  # soft targets + substitution + text regularizer
        seed=0,
        loss=LossConfig(tau2=0.05, alpha=0.2),
        augmentation=AugmentationConfig(k=3, p=0.2, seed=4),
        model=ModelConfig(
            hidden_dim=32,
            embed_dim=32,
            projection_dim=16,
            gin_layers=2,
            text_blocks=1,
            max_len=24,
            vocab_cap=512,
        ),
        fingerprint_nbits=512,
        checkpoint_interval=0,
    )
    result = train(
        corpus,
        index,
        cfg,
        metrics_path=os.path.join(tmp, "metrics.jsonl"),
        checkpoint_path=os.path.join(tmp, "model.amck"),
    )

    print(f"\ntrained {result.steps} steps; every record satisfies")
    print("total = s2p_t2m + s2p_m2t + alpha * er\n")
    shown = result.metrics[:: max(1, result.steps // 8)]
    if shown[-1] is not result.metrics[-1]:
        shown.append(result.metrics[-1])
    for record in shown:
        print(
            f"step {record['step']:>4}  t2m {record['s2p_t2m']:.4f}  "
            f"m2t {record['s2p_m2t']:.4f}  er {record['er']:.4f}  total {record['total']:.4f}"
        )
    print(f"\ncheckpoint bytes: {os.path.getsize(os.path.join(tmp, 'model.amck'))}")
