"""
Training a small flow-matching corrector
========================================

Generate (ground truth, coarse) pairs, train the velocity field for a few
epochs and compare coarse and corrected scenes. The acceptance run trains on
1,000 scenes for 300 epochs; this demo uses a tiny budget so it finishes in
about a minute.
"""

import sys

import numpy as np

from tabletop.corrector.flow import FlowCorrector, TrainConfig, prepare_training_set, train
from tabletop.dataset import GeneratorConfig, generate_pairs
from tabletop.metrics import batch_float_rate, batch_object_collision, emd_to_gt
from tabletop.physics import GeometryLibrary, SceneInstance

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 64
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 20

lib = GeometryLibrary()
gen = GeneratorConfig(require_collision=0.5)
pairs = generate_pairs(n_train, seed=0, config=gen, library=lib)
held_out = generate_pairs(16, seed=1, config=GeneratorConfig(require_collision=1.0), library=lib)

cfg = TrainConfig(hidden_dim=128, epochs=epochs, batch_size=16)
data = prepare_training_set([(coarse, gt) for gt, coarse in pairs], lib)
model, log = train(data, cfg, progress=lambda r: print("epoch %(epoch)3d  flow %(flow_loss).4f" % r)
                   if r["epoch"] % 5 == 0 else None)

fc = FlowCorrector(model, lib)
coarse = [c for _, c in held_out]
fixed = fc.many(coarse)


def summary(scenes):
    insts = [SceneInstance.build(s, lib) for s in scenes]
    return batch_object_collision(insts).mean(), batch_float_rate(insts).mean()


for name, scenes in (("coarse", coarse), ("corrected", fixed)):
    oc, fl = summary(scenes)
    emd = np.mean([emd_to_gt(s, g) for s, (g, _) in zip(scenes, held_out)])
    print(f"{name:9s} OC {oc:.3f}  Float {fl:.3f}  EMD to ground truth {emd:.3f}")
