"""Train a small model on the synthetic motion families and plot (in text)
accuracy as a function of how much of each sequence has been observed.

Runs in about a minute on a laptop CPU. For the full desk-scale recipe see
the README; this uses a reduced schedule to stay quick.
"""

import numpy as np

from skelstream import ModelConfig, TrainConfig, evaluate_ratios, init_model, train
from skelstream.data import batch_arrays, generate_dataset, split_dataset


def bar(fraction, width=40):
    filled = int(round(fraction * width))
    return "#" * filled + "." * (width - filled)


def main():
    seqs = generate_dataset(num_classes=4, per_class=12, num_frames=16,
                            num_joints=6, seed=0, noise=0.02)
    train_seqs, test_seqs = split_dataset(seqs, test_fraction=0.25, seed=0)
    frames, labels = batch_arrays(train_seqs, length=16)
    test_frames, test_labels = batch_arrays(test_seqs, length=16)
    print(f"{len(train_seqs)} training / {len(test_seqs)} held-out sequences")

    config = ModelConfig()
    schedule = TrainConfig(lr=0.02, max_epochs=60, batch_size=16,
                           decay_epochs=[45, 55], seed=0)
    params = init_model(config, seed=schedule.seed)

    def on_epoch(stats):
        if stats.epoch % 10 == 0 or stats.epoch == schedule.max_epochs - 1:
            print(f"epoch {stats.epoch:3d}  loss {stats.loss:.4f}  "
                  f"cls {stats.cls:.4f}  pred {stats.pred:.4f}")

    result = train(params, frames, labels, schedule, on_epoch=on_epoch)

    report = evaluate_ratios(result.params, test_frames, test_labels, step=0.25)
    print("\nearly recognition on held-out sequences:")
    for r, a in zip(report.ratios, report.accuracies):
        print(f"  {int(r * 100):3d}% observed  {bar(a)} {a:.2f}")
    print(f"normalized AUC {report.auc:.3f}")


if __name__ == "__main__":
    main()
