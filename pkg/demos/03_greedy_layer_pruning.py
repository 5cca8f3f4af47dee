"""Iterative greedy layer pruning versus middle-block pruning.

Scores every candidate layer by the dev chrF++ of the model without it,
removes the least important one, repeats, then compares against removing a
centered block, before and after a one-epoch fine-tune.
"""

import time
from dataclasses import replace

from minimt import (
    ModelConfig,
    NoiseRates,
    PruneConfig,
    Rng,
    SplitSpec,
    ToyLanguageSpec,
    TrainConfig,
    build_vocab,
    generate_synthetic_corpus,
    init_model,
    iterative_prune,
    mean_dev_chrf,
    middle_prune,
    train,
)
from minimt.compress import _dev_sets

spec = ToyLanguageSpec()
corpus = generate_synthetic_corpus(
    spec, SplitSpec(train_size=500, dev_size=32, devtest_size=16),
    NoiseRates(), seed=31)
vocab = build_vocab(spec.alphabet(), spec.languages)
config = ModelConfig(vocab_size=len(vocab), d_model=32, n_heads=4, ffn_dim=64,
                     n_encoder_layers=6, n_decoder_layers=6, max_positions=64)

tcfg = TrainConfig(learning_rate=2e-3, batch_size=32, grad_accum_steps=1,
                   eval_every_steps=50, early_stop_patience=10, max_epochs=12,
                   label_smoothing=0.0, seed=31)
print("Training a 6/6 baseline...")
t0 = time.monotonic()
baseline, _ = train(init_model(config, vocab, Rng(31)), corpus.train, corpus.dev, tcfg)
print(f"  done in {time.monotonic() - t0:.0f}s")

pcfg = PruneConfig(n=2, importance_directions=(("anu_Latn", "bnu_Latn"),
                                               ("bnu_Latn", "anu_Latn")),
                   importance_beam_size=1, max_len=48)
dev_sets = _dev_sets(pcfg, corpus.dev)
base_chrf = mean_dev_chrf(baseline, dev_sets, 1, 48)
print(f"Baseline dev chrF++: {base_chrf:.2f}")

print("\nIterative pruning, 2 decoder layers:")
pruned_iter, report = iterative_prune(baseline, pcfg, corpus.dev)
for it in report.iterations:
    scores = ", ".join(f"L{c['layer_id']}={c['chrf']:.1f}" for c in it.candidates)
    print(f"  iteration {it.index}: {scores}")
    print(f"    -> removed layer {it.chosen['layer_id']} "
          f"(chrF++ without it: {it.chosen['chrf']:.2f})")

pruned_mid, _ = middle_prune(baseline, pcfg)
iter_chrf = mean_dev_chrf(pruned_iter, dev_sets, 1, 48)
mid_chrf = mean_dev_chrf(pruned_mid, dev_sets, 1, 48)
print(f"\nBefore fine-tuning: iterative {iter_chrf:.2f} vs middle {mid_chrf:.2f}")

ft_cfg = replace(tcfg, max_epochs=1)
iter_ft, _ = train(pruned_iter, corpus.train, corpus.dev, ft_cfg)
mid_ft, _ = train(pruned_mid, corpus.train, corpus.dev, ft_cfg)
print("After a 1-epoch fine-tune: "
      f"iterative {mean_dev_chrf(iter_ft, dev_sets, 1, 48):.2f} vs "
      f"middle {mean_dev_chrf(mid_ft, dev_sets, 1, 48):.2f} "
      f"(baseline {base_chrf:.2f})")
