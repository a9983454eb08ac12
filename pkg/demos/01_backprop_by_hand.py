"""A tiny network, its gradients, and a finite-difference sanity check."""
import numpy as np

from oscnn import layers as L
from oscnn.layers import LayerSpec, NetworkSpec
from oscnn.tensor import ConvSpec

#%%
# conv -> relu -> pool -> flatten -> head, on 3x8x8 inputs with 4 classes
spec = NetworkSpec((
    LayerSpec("conv", "conv1", conv=ConvSpec(6, 3, 3, 3, 1, 1)),
    LayerSpec("relu", "relu1"),
    LayerSpec("maxpool", "pool1", window=2, stride=2),
    LayerSpec("flatten", "flat"),
    LayerSpec("fully_connected", "head", units=4, lr_role="head"),
), (3, 8, 8), 4)
params = L.init_params(spec, seed=0, dtype=np.float64)
for name, (w, b) in params.items():
    print(f"{name:8s} weights {w.shape} bias {b.shape}")

#%%
rng = np.random.default_rng(1)
x = rng.standard_normal((5, 3, 8, 8))
labels = rng.integers(0, 4, size=5)
logits, cache = L.forward(spec, params, x, "eval")
loss, dlogits = L.softmax_cross_entropy(logits, labels)
grads = L.backward(spec, params, cache, dlogits)
print("loss", loss, "(log 4 =", np.log(4), ")")

#%%
# poke one weight and compare the slope with the analytic gradient
w = params["conv1"][0]
eps = 1e-5
old = w[2, 1, 0, 2]
w[2, 1, 0, 2] = old + eps
up = L.softmax_cross_entropy(L.forward(spec, params, x, "eval")[0], labels)[0]
w[2, 1, 0, 2] = old - eps
down = L.softmax_cross_entropy(L.forward(spec, params, x, "eval")[0], labels)[0]
w[2, 1, 0, 2] = old
print("analytic ", grads["conv1"][0][2, 1, 0, 2])
print("numerical", (up - down) / (2 * eps))

#%%
# the two toy architectures used by the streams
for flavor in L.PRESETS:
    net, p = L.build_preset(flavor, (3, 56, 56), 8, seed=0)
    count = sum(w.size + b.size for w, b in p.values())
    print(f"{flavor:20s} {len(p)} parameterized layers, {count} parameters")
