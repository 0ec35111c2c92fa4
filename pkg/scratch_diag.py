"""Diagnose student training: loss weighting/lr vs masked accuracy."""
import time

import numpy as np

from mdlab import corpus, tensor as T
from mdlab.decoder import DecodeConfig, decode_batch
from mdlab.model import ModelConfig, init_model, forward_logits_batch
from mdlab.trainer import TrainConfig, train

train_set = corpus.gen_corpus("addition", 512, 0)
test_set = corpus.gen_corpus("addition", 50, 1000003)


def masked_accuracy(student, examples, t):
    """Greedy accuracy on masked completion tokens at corruption level t."""
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


for label, weighting, lr in (("elbo-1e-3", "elbo", 1e-3),
                             ("elbo-5e-5", "elbo", 5e-5),
                             ("unw-1e-3", "unweighted", 1e-3)):
    student = init_model(ModelConfig(
        vocab_size=corpus.VOCAB_SIZE, d_model=128, n_layers=4, n_heads=4,
        max_seq_len=128, attention_mode="bidirectional",
        mask_id=corpus.MASK_ID, pad_id=corpus.PAD_ID), 0)
    tc = TrainConfig(trajectory_ratio=0.0, epochs=10, batch_size=32, seed=0,
                     loss_weighting=weighting, lr=lr)
    t0 = time.time()
    student, log = train(train_set, student, tc)
    accs = {t: masked_accuracy(student, test_set, t) for t in (1.0, 0.5, 0.2)}
    _, dec_acc, dec_tps = decode_batch(
        student, test_set, DecodeConfig(max_new_tokens=40, confidence_threshold=0.9))
    print(f"{label}: {time.time()-t0:.0f}s masked-acc t=1:{accs[1.0]:.3f} "
          f"t=.5:{accs[0.5]:.3f} t=.2:{accs[0.2]:.3f} decode acc={dec_acc:.2f} tps={dec_tps:.2f}")
