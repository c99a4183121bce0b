"""Train the defect classifier on the full synthetic preset and evaluate.

Reproduces the acceptance-grade run: 930 samples, 790/140 split, 50 epochs.
Takes roughly 15 s end to end on a laptop CPU.

Run: python3 demos/04_train_classifier.py
"""

import tempfile
import time

from waferfa import mlp, synth

with tempfile.TemporaryDirectory() as tmp:
    print("rendering 930-sample dataset...")
    synth.write_dataset(
        synth.PRESET_FULL_9CLASS, tmp, seed=20260810,
        val_counts=synth.VAL_COUNTS_FULL_9CLASS,
    )
    X, y, split = mlp.load_dataset_features(tmp)
    print(f"features: {X.shape}, train {len(split['train'])}, val {len(split['val'])}")

    started = time.time()
    model, curve = mlp.train(X[split["train"]], y[split["train"]], mlp.TrainConfig(seed=7))
    print(f"trained 50 epochs in {time.time() - started:.1f}s; "
          f"loss {curve[0]:.3f} -> {curve[-1]:.3f}")

    report = mlp.evaluate(model, X[split["val"]], y[split["val"]])
    print()
    print(report.to_text())

    import numpy as np

    small = mlp.init_model(1, in_dim=7, hidden_dim=5, class_names=tuple("abcd"))
    batch = np.random.default_rng(3).normal(size=(2, 7))
    check = mlp.gradient_check(small, batch, np.array([0, 2]))
    print(f"\nbackprop vs central differences, max relative error: {check:.2e}")
