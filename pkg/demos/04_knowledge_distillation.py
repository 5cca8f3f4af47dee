"""Sequence-level knowledge distillation with target-side deduplication.

A trained teacher beam-translates the training sources; synthetic pairs whose
target exactly matches an authentic target are dropped, and the survivors are
re-filtered before joining the authentic data.
"""

import time

from minimt import (
    DistillConfig,
    ModelConfig,
    NoiseRates,
    Rng,
    SplitSpec,
    ToyLanguageSpec,
    TrainConfig,
    build_vocab,
    distill,
    generate_synthetic_corpus,
    init_model,
    train,
)

spec = ToyLanguageSpec()
corpus = generate_synthetic_corpus(
    spec, SplitSpec(train_size=400, dev_size=30, devtest_size=10),
    NoiseRates(), seed=41)
vocab = build_vocab(spec.alphabet(), spec.languages)

# the teacher is a wider model trained longer than a student would be
teacher_config = ModelConfig(vocab_size=len(vocab), d_model=48, n_heads=4,
                             ffn_dim=96, n_encoder_layers=4, n_decoder_layers=4,
                             max_positions=64)
print("Training the toy teacher...")
t0 = time.monotonic()
teacher, _ = train(
    init_model(teacher_config, vocab, Rng(41)), corpus.train, corpus.dev,
    TrainConfig(learning_rate=2e-3, batch_size=32, grad_accum_steps=1,
                eval_every_steps=50, early_stop_patience=10, max_epochs=10,
                label_smoothing=0.0, seed=41))
print(f"  done in {time.monotonic() - t0:.0f}s")

authentic = corpus.train
kd = distill(teacher, authentic, DistillConfig(beam_size=3, max_len=48),
             authentic, student_vocab=vocab)
synthetic = [r for r in kd if r.origin.startswith("kd:")]

print(f"\nAuthentic records:            {len(authentic)}")
print(f"Teacher translations kept:    {len(synthetic)}")
print(f"KD corpus total:              {len(kd)}")

overlap = {r.tgt for r in synthetic} & {r.tgt for r in authentic}
print(f"Synthetic∩authentic targets:  {len(overlap)} (dedup guarantees 0)")

if synthetic:
    s = synthetic[0]
    print(f"\nExample synthetic pair ({s.origin}):")
    print(f"  src: {s.src}")
    print(f"  tgt: {s.tgt}")
