"""
A short joint training run
==========================

Train the single-branch variant for a few epochs on a small synthetic
set and watch the three loss terms.  Everything is seeded, so this
script prints the same numbers on every run.
"""

import os
import tempfile

from eegvae.dsp import SynthConfig, synth_generate
from eegvae.model import count_parameters, default_configs, model_init, model_read, model_write
from eegvae.rng import derive
from eegvae.training import TrainConfig, train

SEED = 3
ds = synth_generate(SynthConfig(trials_per_class=8, seed=21))

model = model_init("v1", default_configs("v1"), seed=derive(SEED, 0))
counts = count_parameters(model)
print("parameters:", ", ".join(f"{k}={v}" for k, v in counts.items()))

cfg = TrainConfig(epochs=6, lr=1e-3, weight_decay=1e-5, batch_size=8,
                  seed=derive(SEED, 1))
model, history = train(model, ds, cfg)

print(f"\n{'epoch':>5} {'l_r':>9} {'l_kl':>9} {'l_clf':>9} {'l_total':>9}")
for e, h in enumerate(history):
    print(f"{e:>5} {h.l_r:>9.4f} {h.l_kl:>9.4f} {h.l_clf:>9.4f} {h.l_total:>9.4f}")

# the container holds the config, every parameter, and the running stats
path = os.path.join(tempfile.mkdtemp(), "model.vegm")
model_write(model, path)
again = model_read(path)
print("\nsaved", os.path.getsize(path), "bytes; reload variant", again.variant)
