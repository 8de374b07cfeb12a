# A short tour of the tape: build a conv -> relu -> max -> affine chain by hand,
# run backward, and compare against central differences.
import numpy as np

from intnet import autodiff as ad

gen = np.random.default_rng(0)

# %% one word of 6 characters, 4-dim char embeddings, 3 filters of width 3
x = ad.Parameter(gen.standard_normal((1, 4, 6)), "x")
w = ad.Parameter(gen.standard_normal((3, 4, 3)) * 0.5, "w")
b = ad.Parameter(np.zeros(3), "b")
head = gen.standard_normal(3)


def loss():
    h = ad.relu(ad.conv1d(x, w, b))              # [1, 3, 6], same length as the input
    z = ad.max_over_time(h, [6])                 # [1, 3]
    return ad.sum_all(ad.mul_const(z, head[None]))


out = loss()
ad.backward(out)
print("loss", out.item())
print("dL/db", b.grad)

# %% the same gradients by finite differences; kink crossings are skipped
report = {}
err = ad.grad_check(loss, [x, w, b], report=report)
print(f"max relative error {err:.2e}, checked {report['checked']} coords, skipped {report['skipped']}")

# %% no_grad builds no tape: handy for evaluation passes
with ad.no_grad():
    v = loss()
print("requires grad under no_grad:", v.requires_grad)
