"""Transfer the pretrained encoder: classification fine-tune and few-shot.

Compares fine-tuning from the pretrained checkpoint against training the
same classifier from scratch, then runs the n-way/m-shot episodic protocol
on frozen encoder features. Expects `demos/03_pretrain_and_reconstruct.py`
to have produced desk_run/checkpoint_final.bin (or runs pretraining itself).
"""

from pathlib import Path

from cloudmae import (Checkpoint, build_dataset, desk_preset, fewshot_eval,
                      finetune_classify, pretrain)
from cloudmae.seeding import derive_seed

cfg = desk_preset()
ckpt_path = Path("desk_run/checkpoint_final.bin")
if ckpt_path.exists():
    checkpoint = Checkpoint.load(ckpt_path)
    print(f"loaded {ckpt_path}")
else:
    print("no checkpoint found, pretraining first...")
    checkpoint, _ = pretrain(cfg, out_dir="desk_run")

dataset = build_dataset(cfg.data, cfg.points, derive_seed(cfg.seed, "dataset"))

acc_pre, _, _ = finetune_classify(dataset, cfg, checkpoint=checkpoint)
acc_scratch, _, _ = finetune_classify(dataset, cfg, checkpoint=None)
print(f"\nfine-tune test accuracy: pretrained {acc_pre:.3f} "
      f"vs scratch {acc_scratch:.3f}")

pool = dataset.train + dataset.val + dataset.test
for n_way, m_shot in ((5, 1), (5, 5), (3, 1)):
    result = fewshot_eval(checkpoint, pool, n_way, m_shot, runs=10,
                          test_per_class=15, seed=3)
    print(f"{n_way}-way {m_shot}-shot: {100 * result['mean']:.1f} "
          f"+/- {100 * result['std']:.1f} over {result['runs']} runs")
