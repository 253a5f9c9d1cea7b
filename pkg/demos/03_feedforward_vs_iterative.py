"""Race the trained generator against pre-image pixel optimization.

The descriptive route starts from Gaussian noise and gradient-descends the
pixels of one image until its Gram statistics match the prototype; the
feed-forward route just runs the trained generator once.  Both use the same
descriptor and loss, so "time to reach the generator's loss" is a fair
scoreboard.
"""

import json
import os

from gramtex.descriptor import LossSpec, tiny_descriptor
from gramtex.generator import init_params
from gramtex.image_io import save_image_tensor
from gramtex.patterns import checkerboard
from gramtex.preimage import (
    PreimageConfig,
    match_loss_time,
    synthesize_iterative,
    write_benchmark_report,
)
from gramtex.training import TrainConfig, train_texture

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

x0 = checkerboard(32, tile=4)
net = tiny_descriptor(seed=0)
spec = LossSpec(["relu1", "relu2"])

print("training the feed-forward generator (this is the slow part, done once) ...")
params = init_params(mode="texture", scales=3, schedule=(8, 16, 24), seed=0)
params, _ = train_texture(
    x0, params, net, spec,
    TrainConfig(iterations=1000, batch=4, seed=0, lr_drop_at=500, lr_drop_every=200),
)

print("racing: iterative optimization until it matches the generator's loss ...")
report = match_loss_time(params, net, spec, x0,
                         PreimageConfig(max_iters=2000, lr=0.05, seed=0), samples=8)
write_benchmark_report(report, f"{OUT}/03_benchmark.json")
print(json.dumps(report, indent=2, sort_keys=True))
print(f"  -> feed-forward is {report['ratio']:.0f}x faster to the same loss")

# Also keep the iterative route's best image for visual comparison.
best, trace = synthesize_iterative(x0, net, spec, PreimageConfig(max_iters=300, lr=0.05, seed=1))
save_image_tensor(best, f"{OUT}/03_iterative_best.ppm")
print(f"iterative image after 300 iterations: loss {min(r.loss for r in trace):.4g}; "
      f"outputs under {OUT}/")
