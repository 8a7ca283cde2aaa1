"""Tour of the reverse-mode tape: values, gradients, gradient reversal.

Run:  python3 demos/01_tape_basics.py
"""

import numpy as np

from advmtl import autodiff as ad
from advmtl.autodiff import GradReversalSpec, Tape

# Every computation lives on a single-use tape. Leaves are the tensors
# you want gradients for; constants are plain inputs.
tape = Tape()
W = tape.leaf([[0.5, -1.0], [2.0, 0.0]])
x = tape.leaf([1.0, 3.0])
b = tape.constant([0.1, 0.1])

h = ad.tanh(ad.add(ad.matmul(W, x), b))
loss = ad.sum_all(ad.mul(h, h))
print("loss:", float(loss.value))

grads = ad.backward(tape, loss)
print("dL/dW:\n", grads[W.idx])
print("dL/dx:", grads[x.idx])

# The analytic gradients agree with central finite differences.
def loss_fn(params, with_grads):
    t = Tape()
    Wn, xn = t.leaf(params["W"]), t.leaf(params["x"])
    out = ad.sum_all(ad.mul(ad.tanh(ad.add(ad.matmul(Wn, xn), t.constant([0.1, 0.1]))),
                            ad.tanh(ad.add(ad.matmul(Wn, xn), t.constant([0.1, 0.1])))))
    if not with_grads:
        return float(out.value), None
    g = ad.backward(t, out)
    return float(out.value), {"W": g[Wn.idx], "x": g[xn.idx]}

err = ad.finite_difference_check(loss_fn, {"W": W.value, "x": x.value}, eps=1e-5)
print("finite-difference max relative error:", err)

# Gradient reversal: identity forward, -scale backward. This single node
# is what turns a discriminator's minimization into the encoder's
# maximization during adversarial training.
tape = Tape()
v = tape.leaf([1.0, -2.0])
rev = ad.gradient_reversal(v, GradReversalSpec(scale=0.05))
print("\nreversal forward (identity):", rev.value)
g = ad.backward(tape, ad.sum_all(rev))
print("reversal backward at scale 0.05:", g[v.idx], "(plain sum would give [1, 1])")
