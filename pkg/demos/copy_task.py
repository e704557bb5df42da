"""Train the attention model to copy random id sequences, then decode a few."""

import numpy as np

from xlnmt import numerics as nx
from xlnmt.corpus import BOS_ID
from xlnmt.evaluation import corpus_bleu
from xlnmt.harness.synthetic import copy_task
from xlnmt.model import ModelConfig, Seq2Seq, attention
from xlnmt.search import beam_search
from xlnmt.trainer import TrainSchedule, train

data = copy_task(650, vocab_size=20, seed=0)
tr, dev, test = data[:500], data[500:550], data[550:]


def bleu(model, pairs, beam=5, smoothing="none"):
    hyps = [[str(i) for i in beam_search(s, model, beam)[0].output] for s, _ in pairs]
    return corpus_bleu(hyps, [[str(i) for i in s] for s, _ in pairs], smoothing).bleu


model = Seq2Seq(ModelConfig(vocab_size=20, embed_dim=16, hidden_dim=32, dropout_p=0.1, seed=0))
# a high learning rate suits this tiny model; burn-in keeps the early
# near-zero dev scores from triggering decays before anything is learned
schedule = TrainSchedule(initial_lr=0.005, max_epochs=30, burn_in=20)

print("epoch\tloss\tdev_bleu\tlr\tdecision")
train(model, tr, schedule, dev_bleu=lambda m: bleu(m, dev, 1, "add-one"), log=print)

print(f"\ntest BLEU {bleu(model, test):.4f}")
for src, _ in test[:5]:
    hyp = beam_search(src, model, 5)[0]
    print(src, "->", list(hyp.output), f"(log p = {hyp.score:.3f})")

# attention weights while greedily copying the first test sentence
src = test[0][0]
h, c, enc = model.start(src)
p = model.params
prev, rows = [BOS_ID], []
for tok in beam_search(src, model, 1)[0].tokens:
    with nx.no_grad():
        _, weights = attention(h, enc.annotations, p["att.W_enc"], p["att.W_dec"], p["att.v"],
                               projected=enc.projected, score_bias=enc.score_bias)
    rows.append(weights.data[0])
    _, (h, c, enc) = model.step(prev, (h, c, enc))
    prev = [tok]
print("\nsource", src)
print("attention (row = output step, column = source position):")
print(np.array2string(np.array(rows), precision=2, suppress_small=True))
