"""Scratch pilot: can the student learn addition and decode in parallel?"""
import time

import numpy as np

from mdlab import corpus
from mdlab.decoder import DecodeConfig, decode_batch
from mdlab.model import ModelConfig, init_model
from mdlab.teacher import TeacherTrainConfig, train_teacher, score_corpus, next_token_accuracy
from mdlab.bucketing import compute_thresholds, bucket_corpus
from mdlab.trainer import TrainConfig, train

t_all = time.time()
train_set = corpus.gen_corpus("addition", 2000, 0)
test_set = corpus.gen_corpus("addition", 200, 1000003)

t0 = time.time()
teacher_cfg = TeacherTrainConfig(epochs=12, batch_size=32)
tmodel, tlog = train_teacher(train_set, teacher_cfg, 0)
print(f"teacher: {time.time()-t0:.0f}s eval_losses={[round(r['eval_loss'],4) for r in tlog]}")
print("teacher next-token acc on train[:200]:", next_token_accuracy(tmodel, train_set[:200]))

t0 = time.time()
scored = score_corpus(tmodel, train_set, "nll")
print(f"scoring: {time.time()-t0:.0f}s")
all_scores = np.concatenate([ex.scores for ex in scored])
print("score percentiles:", [round(float(np.percentile(all_scores, q)), 4) for q in (1, 25, 50, 75, 99)])
table = compute_thresholds(all_scores, 8, ordering="hard_to_easy", random_seed=0)
bucketed = bucket_corpus(scored, table)

for label, ratio in (("trims", 0.1), ("baseline", 0.0)):
    t0 = time.time()
    student = init_model(ModelConfig(
        vocab_size=corpus.VOCAB_SIZE, d_model=128, n_layers=4, n_heads=4,
        max_seq_len=128, attention_mode="bidirectional",
        mask_id=corpus.MASK_ID, pad_id=corpus.PAD_ID), 0)
    tc = TrainConfig(trajectory_ratio=ratio, epochs=15, batch_size=32, seed=0)
    student, log = train(bucketed, student, tc)
    losses = [r["loss"] for r in log]
    print(f"{label}: train {time.time()-t0:.0f}s  loss first/last epoch: "
          f"{np.mean(losses[:2000]):.3f} -> {np.mean(losses[-2000:]):.3f}")
    for tau in (0.5, 0.8, 0.9, 0.95):
        t1 = time.time()
        traces, acc, mean_tps = decode_batch(
            student, test_set, DecodeConfig(max_new_tokens=40, confidence_threshold=tau))
        print(f"  {label} tau={tau}: acc={acc:.3f} tps={mean_tps:.2f} "
              f"({time.time()-t1:.0f}s decode)")
print(f"total {time.time()-t_all:.0f}s")
