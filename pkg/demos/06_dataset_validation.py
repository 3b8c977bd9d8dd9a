"""Building a validated attack dataset.

Writes the image corpus to disk, matches model label strings against corpus
classes by token overlap, runs the majority-vote output validation to map
model output indices to labels, and samples a per-class attack set.
"""
from dlaudit import dataset as ds
from dlaudit import minigraph as mg

from _common import WORKDIR, trained_classifier, write_corpus

corpus_root = write_corpus(WORKDIR / "corpus")
corpus = ds.LabeledCorpus.build(corpus_root)
print(f"corpus at {corpus_root}: "
      f"{ {k: len(v) for k, v in corpus.classes.items()} }")

print("\nsemantic matching (token overlap, aliases from the optional manifest):")
for label in ("red", "yellow light", "banana"):
    ranked = ds.match_semantic_labels([label], corpus, top_n=3)[label]
    print(f"  {label!r} -> {ranked}")

print("\ntraining the subject model ...")
graph = trained_classifier()

cands = []
for cls_label, paths in corpus.classes.items():
    for p in paths[:40]:
        cands.append((ds.decode_image(p), cls_label))

lm = ds.validate_labelmap(lambda v: mg.forward(graph, v).probs, cands,
                          graph.num_classes, alpha1=0.7, alpha2=0.8)
print(f"\nvalidated label map (confidence gate 0.7, vote gate 0.8):")
for idx in sorted(lm.entries):
    print(f"  output index {idx} -> {lm.entries[idx]!r}")
print(f"coverage: {lm.coverage:.0%}")

attack_set = ds.sample_attack_set(lm, corpus, k=50, seed=0)
print(f"\nattack set: {len(attack_set)} samples, "
      f"{ {k: v for k, v in sorted(attack_set.per_class.items())} }")
print("every sample's class is a validated label:",
      all(s.label in lm.entries.values() for s in attack_set.samples))
