"""How good does the student get with a long budget on 3-digit addition?"""
import time

import numpy as np

from mdlab import corpus, tensor as T
from mdlab.decoder import DecodeConfig, decode_batch
from mdlab.model import ModelConfig, init_model, forward_logits_batch
from mdlab.trainer import TrainConfig, train


def masked_accuracy(student, examples, t):
    rng = np.random.default_rng(9)
    correct = total = 0
    with T.no_grad():
        for ex in examples:
            c = len(ex.completion_tokens)
            z = ex.completion_tokens.copy()
            m = rng.random(c) < t
            if not m.any():
                continue
            z[m] = corpus.MASK_ID
            seq = np.concatenate([ex.prompt_tokens, z])
            logits = forward_logits_batch(student, seq[None])
            P = len(ex.prompt_tokens)
            pred = logits.data[0, P:P + c].argmax(-1)
            correct += int((pred[m] == ex.completion_tokens[m]).sum())
            total += int(m.sum())
    return correct / total


train_set = corpus.gen_corpus("addition", 2000, 0)
test_set = corpus.gen_corpus("addition", 100, 1000003)

student = init_model(ModelConfig(
    vocab_size=corpus.VOCAB_SIZE, d_model=128, n_layers=4, n_heads=4,
    max_seq_len=128, attention_mode="bidirectional",
    mask_id=corpus.MASK_ID, pad_id=corpus.PAD_ID), 0)

for round_idx in range(6):
    tc = TrainConfig(trajectory_ratio=0.0, epochs=10, batch_size=32, seed=round_idx)
    t0 = time.time()
    student, log = train(train_set, student, tc)
    acc1 = masked_accuracy(student, test_set, 1.0)
    acc5 = masked_accuracy(student, test_set, 0.5)
    _, dec_acc, dec_tps = decode_batch(
        student, test_set, DecodeConfig(max_new_tokens=40, confidence_threshold=0.9))
    print(f"epochs={10*(round_idx+1)}: {time.time()-t0:.0f}s "
          f"masked t=1:{acc1:.3f} t=.5:{acc5:.3f} decode acc={dec_acc:.2f} tps={dec_tps:.2f}",
          flush=True)
