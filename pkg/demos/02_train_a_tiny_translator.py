"""Train a small encoder-decoder translator on the cipher corpus and score it.

Uses a 4/4-layer model so the demo finishes in about a minute; the test suite
trains the full 12/12 configuration.
"""

import time

from minimt import (
    ModelConfig,
    NoiseRates,
    Rng,
    SplitSpec,
    ToyLanguageSpec,
    TrainConfig,
    bleu,
    build_vocab,
    chrf_pp,
    generate_synthetic_corpus,
    init_model,
    train,
    translate_records,
)

spec = ToyLanguageSpec()
corpus = generate_synthetic_corpus(
    spec, SplitSpec(train_size=500, dev_size=40, devtest_size=40),
    NoiseRates(), seed=21)
vocab = build_vocab(spec.alphabet(), spec.languages)
print(f"Vocabulary: {len(vocab)} tokens "
      f"({len(vocab.language_tags)} language tags + characters + specials)")

config = ModelConfig(vocab_size=len(vocab), d_model=32, n_heads=4, ffn_dim=64,
                     n_encoder_layers=4, n_decoder_layers=4, max_positions=64)
model = init_model(config, vocab, Rng(21))
print(f"Model: {config.n_encoder_layers}/{config.n_decoder_layers} layers, "
      f"{model.parameter_count():,} parameters")

cfg = TrainConfig(learning_rate=2e-3, batch_size=32, grad_accum_steps=1,
                  eval_every_steps=50, early_stop_patience=10, max_epochs=12,
                  label_smoothing=0.0, seed=21)
t0 = time.monotonic()
best, log = train(model, corpus.train, corpus.dev, cfg)
print(f"\nTrained for {log.optimizer_steps} steps in {time.monotonic() - t0:.0f}s "
      f"(stop: {log.stop_reason}, best dev loss {log.best_dev_loss:.4f})")

hyps = translate_records(best, corpus.devtest, beam_size=3, max_len=48)
refs = [r.tgt for r in corpus.devtest]
print(f"devtest BLEU   {bleu(hyps, refs).value:6.2f}")
print(f"devtest chrF++ {chrf_pp(hyps, refs).value:6.2f}")

print("\nSample translations:")
for r, h in list(zip(corpus.devtest, hyps))[:3]:
    print(f"  {r.src_lang}: {r.src}")
    print(f"  model     : {h}")
    print(f"  reference : {r.tgt}\n")
