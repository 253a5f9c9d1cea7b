"""Train a stylizing generator and explore the noise-magnitude knob.

A style-mode generator sees the content image (downsampled to every scale)
next to the noise, and is trained on texture loss plus alpha times content
loss.  After training, scaling the input noise trades texture against
content without retraining: k=0 keeps the net deterministic in the content,
large k drowns the content pathway in texture.
"""

import os

from gramtex.descriptor import LossSpec, tiny_descriptor
from gramtex.generator import generator_forward, init_params, sample_noise
from gramtex.image_io import save_image_tensor
from gramtex.patterns import checkerboard, diagonal_ramp, disc
from gramtex.tensor import no_grad
from gramtex.training import TrainConfig, train_style

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

style = checkerboard(32, tile=4)            # texture to impose
pool = [diagonal_ramp(32), disc(32)]        # tiny pool of content images
save_image_tensor(style, f"{OUT}/02_style.ppm")
save_image_tensor(pool[0], f"{OUT}/02_content_ramp.ppm")
save_image_tensor(pool[1], f"{OUT}/02_content_disc.ppm")

net = tiny_descriptor(seed=0)
spec = LossSpec(["relu1", "relu2"], content_layers=("relu2",), alpha=50.0)
params = init_params(mode="style", scales=3, schedule=(8, 16, 24), seed=0)

print("training stylizer (texture + 50 x content loss) ...")
params, trace = train_style(style, pool, params, net, spec,
                            TrainConfig(iterations=300, batch=4, seed=0))
last = trace[-1]
print(f"  final texture loss {last.texture_loss:.4g}, content loss {last.content_loss:.4g}")

# --- the test-time trade-off: scale the noise, keep the weights ----------------
with no_grad():
    for k in (0.0, 0.5, 1.0, 4.0):
        z = sample_noise(32, scales=3, magnitude=k, seed=9)
        out = generator_forward(params, z, y=pool[0])
        save_image_tensor(out, f"{OUT}/02_stylized_k{k:g}.ppm")
        print(f"  wrote stylized ramp with noise magnitude k={k:g}")

print(f"outputs under {OUT}/")
