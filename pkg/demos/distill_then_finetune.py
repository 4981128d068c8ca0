"""
Distillation as initialization for supervised training
=======================================================

A student distilled without labels is fine-tuned with AAM-softmax on the
speaker labels, next to one trained with AAM-softmax from scratch.
"""

from dataclasses import replace

from distillkit.evaluate import run_trials
from distillkit.losses import AamConfig
from distillkit.nnet import StudentNet, student_config
from distillkit.synth import SynthSpec, generate_corpus
from distillkit.trainer import TrainConfig, dense_labels, finetune_supervised, train_distill

corpus = generate_corpus(SynthSpec(n_speakers=20, utts_per_speaker=30, seed=3))
labels, names = dense_labels(corpus.train_labels)
base = TrainConfig(epochs=6, seed=3)


def eer(net):
    return run_trials(net, corpus.test_features, corpus.trials).eer


distilled = StudentNet(student_config("tdnn-tiny"), seed=3)
train_distill(corpus.train_features, corpus.teacher, distilled, base)
print(f"distilled (contrastive)       EER {eer(distilled):.4f}")

# margin warmup shorter than the run so the 0.3 margin is actually used
aam = replace(base, loss="aam", lr_start=0.01, lr_end=0.001, aam=AamConfig(30.0, 0.3, 3))
tuned = distilled.copy()
finetune_supervised(corpus.train_features, labels, tuned, aam)
print(f"distilled + AAM fine-tuning   EER {eer(tuned):.4f}")

scratch = StudentNet(student_config("tdnn-tiny"), seed=3)
finetune_supervised(corpus.train_features, labels, scratch, replace(aam, lr_start=0.1, lr_end=0.01))
print(f"AAM from scratch ({len(names)} spk)    EER {eer(scratch):.4f}")
