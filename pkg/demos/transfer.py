"""Transfer to a language the model never trained on.

Four toy languages render the same concepts. The model trains on xa, xb and
xc and is then tested on xd, whose only link to the training data is its
aligned word vectors (and, at overlap 0.7, the word forms it shares with xc).
Takes a few minutes.
"""

import sys
import tempfile
from pathlib import Path

from xlnmt.harness.config import ExperimentConfig, ModelOptions, PreprocessOptions, TrainOptions
from xlnmt.harness.experiment import run_experiment
from xlnmt.harness.overlap import vocab_overlap_stats
from xlnmt.harness.synthetic import SyntheticSpec, generate_synthetic_languages

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
root = Path(tempfile.mkdtemp(prefix="xlnmt-demo-"))
LANGS = ("xa", "xb", "xc", "xd")

summary = []
for overlap, embeddings in ((0.7, "pretrained"), (0.0, "pretrained"), (0.7, "random")):
    data = root / f"data-{overlap}"
    if not data.exists():
        langs = generate_synthetic_languages(SyntheticSpec(overlap=overlap, noise=0.7))
        langs.write(data)
        stats = vocab_overlap_stats(LANGS, [langs.corpus("xc", "xd", "train")])
        print(f"overlap {overlap}: xc/xd Jaccard in the training text = {stats.jaccard[2, 3]:.3f}")

    config = ExperimentConfig(
        data_dir=data,
        train_pairs=[("xa", "xb"), ("xa", "xc"), ("xb", "xc")],
        test_pairs=[("xd", "xa"), ("xd", "xb"), ("xd", "xc")],
        embeddings={lang: data / f"{lang}.vec" for lang in LANGS},
        name=f"o{overlap}-{embeddings}",
        embedding_mode=embeddings,
        preprocess=PreprocessOptions(min_freq=1),
        model=ModelOptions(embed_dim=16, hidden_dim=32),
        train=TrainOptions(initial_lr=0.005, max_epochs=epochs, burn_in=10),
    )
    result = run_experiment(config, root / "runs")
    print(f"\n== overlap {overlap}, {embeddings} embeddings ==")
    print(result.transfer_report.table())
    summary.append((overlap, embeddings, result.record("avg(xd->xa+xb+xc)").bleu,
                    result.record("avg(xa+xb+xc->xd)").bleu, result.record("transfer(xd)").bleu))

print("overlap  embeddings  xd->train  train->xd  transfer")
for overlap, emb, out_of, into, both in summary:
    print(f"{overlap:7}  {emb:10}  {100 * out_of:9.1f}  {100 * into:9.1f}  {100 * both:8.1f}")
print(f"\nrun directories under {root / 'runs'}")
