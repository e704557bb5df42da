"""How wide does the beam need to be?

A seeded toy model gives every prefix its own next-token distribution, so
the exact best output can be found by enumerating all sequences.
"""

from xlnmt.search import beam_search, count_sequences, exhaustive_decode
from xlnmt.toys import PrefixTableModel

V, L = 6, 4
print(f"{count_sequences(V - 2, L)} complete outputs with {V - 2} emittable tokens and max_len {L}\n")

widths = (1, 2, 3, 5, 10, 50)
print("seed  exhaustive  " + "  ".join(f"beam={w:<3}" for w in widths))
for seed in range(8):
    model = PrefixTableModel(V, seed, sharpness=1.0)
    best = exhaustive_decode([4], model, max_len=L)
    scores = [beam_search([4], model, beam_size=w, max_len=L)[0].score for w in widths]
    marks = ["  *" if abs(s - best.score) < 1e-12 else "   " for s in scores]
    print(f"{seed:4}  {best.score:10.3f}  " + "  ".join(f"{s:6.3f}{m}" for s, m in zip(scores, marks)))
print("\n* = matches the exhaustive optimum")

model = PrefixTableModel(V, 0, sharpness=1.0)
print("\n5-best at beam 5:")
for h in beam_search([4], model, beam_size=5, max_len=L, nbest=5):
    print(f"  {h.score:8.3f}  {list(h.output)}{'  (EOS forced at max_len)' if h.forced else ''}")
