"""Train briefly, then run all four evaluation protocols on the checkpoint.

Run: python3 demos/06_evaluate.py        (about a minute on CPU)
"""

import os
import tempfile

from moltext.chem import parse_smiles
from moltext.data import (
    AugmentationConfig,
    ProbeItem,
    QAItem,
    RetrievalItem,
    ScreeningItem,
    load_corpus,
)
from moltext.encoders import ModelConfig
from moltext.evaluation import eval_qa, eval_retrieval, eval_screening, finetune_probe
from moltext.losses import LossConfig
from moltext.simindex import build_topk
from moltext.toydata import (
    make_corpus,
    make_probe_dataset,
    make_qa_dataset,
    make_screening_dataset,
    write_corpus_jsonl,
)
from moltext.train import TrainConfig, train

with tempfile.TemporaryDirectory() as tmp:
    records = make_corpus(48, seed=11)
    corpus_path = os.path.join(tmp, "corpus.jsonl")
    write_corpus_jsonl(corpus_path, records)
    corpus = load_corpus(corpus_path, radius=2, nbits=512)
    index = build_topk(corpus.fingerprints(), k=3)

    cfg = TrainConfig(
        epochs=200,
        batch_size=16,
        learning_rate=3e-3,
        mode="ablation2",
        seed=0,
        loss=LossConfig(tau2=0.05),
        augmentation=AugmentationConfig(k=3, p=0.1, seed=5),
        model=ModelConfig(
            hidden_dim=32,
            embed_dim=32,
            projection_dim=16,
            gin_layers=2,
            text_blocks=1,
            max_len=16,
            vocab_cap=512,
        ),
        fingerprint_nbits=512,
    )
    model = train(corpus, index, cfg).model
    graphs = {r["id"]: parse_smiles(r["smiles"]) for r in records}

    # Retrieval: find the right molecule among 4 candidates, given its text.
    items = [RetrievalItem(r["id"], r["smiles"], graphs[r["id"]], r["descriptions"][0]) for r in records]
    rep = eval_retrieval(model, items, direction="given_text", n_options=4, trials=5, seed=0)
    print(f"retrieval @4 (chance 25%): mean {rep.mean:.1f}% +/- {rep.std:.1f}")

    # Multiple choice: which tag word names this molecule?
    qa_items = [
        QAItem(q["id"], q["smiles"], graphs[q["id"]], q["question"], q["options"], q["answer_index"])
        for q in make_qa_dataset(records, seed=1)
    ]
    qa = eval_qa(model, qa_items)
    print(f"multiple choice (chance 20%): {qa.accuracy:.1f}% ({qa.correct}/{qa.n_items})")

    # Screening: rank the library against one prompt, count actives up top.
    s_records = make_screening_dataset(records, prevalence=0.3, seed=2)
    s_items = [ScreeningItem(s["id"], s["smiles"], graphs[s["id"]], s["label"]) for s in s_records]
    screen = eval_screening(model, s_items, "aromatic ring core", top_n=10)
    print(f"screening top-10 hit rate: {screen.hit_rate:.2f} (prevalence {screen.prevalence:.2f})")

    # Probe: logistic heads on frozen embeddings, reported as test AUC.
    p_items = [
        ProbeItem(p["id"], p["smiles"], graphs[p["id"]], p["labels"])
        for p in make_probe_dataset(records, seed=3)
    ]
    probe = finetune_probe(model, p_items, epochs=60, seed=0)
    print(f"probe test AUCs: {[f'{v:.3f}' for v in probe.test_aucs]} mean {probe.mean_auc:.3f}")
