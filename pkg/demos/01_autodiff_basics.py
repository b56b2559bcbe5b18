"""Tour of the differentiable core: tensors, the tape, and Adam.

Run with:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from smajudge import numerics as nm

# --- forward primitives -----------------------------------------------------

x = nm.tensor([1.0, 1.0])
w = nm.tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
b = nm.tensor([1.0, 0.0], requires_grad=True)
print("affine([1,1]) =", nm.affine(x, w, b).data)          # [4, 7]
print("softmax([0, ln 3]) =", nm.softmax(nm.tensor([0.0, np.log(3.0)])).data)
print("sigmoid(ln 3) =", nm.activation(nm.tensor([np.log(3.0)]), "sigmoid").data)

# --- reverse-mode gradients ---------------------------------------------------

# d/dx of x^2 at x = 3 is 6, recorded on an explicit tape
x3 = nm.tensor(np.asarray(3.0), requires_grad=True)
with nm.Tape() as tape:
    y = nm.mul(x3, x3)
nm.backward(y, tape)
print("d(x^2)/dx at 3 =", x3.grad)

# gradients of a small classifier against finite differences
rng = np.random.default_rng(0)
w1 = nm.tensor(rng.normal(size=(4, 3)), requires_grad=True)
b1 = nm.tensor(np.zeros(4), requires_grad=True)
inputs = rng.normal(size=3)


def loss_value():
    hidden = nm.tanh(nm.affine(nm.tensor(inputs), w1, b1))
    return nm.cross_entropy(nm.softmax(hidden), truth=2)


with nm.Tape() as tape:
    loss = loss_value()
nm.backward(loss, tape)

eps = 1e-5
flat = w1.data.reshape(-1)
orig = flat[5]
flat[5] = orig + eps
up = loss_value().item()
flat[5] = orig - eps
down = loss_value().item()
flat[5] = orig
fd = (up - down) / (2 * eps)
print(f"analytic grad {w1.grad.reshape(-1)[5]:+.8f}  finite difference {fd:+.8f}")

# --- Adam ---------------------------------------------------------------------

p = nm.tensor([0.0], requires_grad=True)
state = nm.AdamState.for_params({"p": p}, lr=0.1)
for step in range(3):
    nm.adam_step({"p": p}, {"p": np.array([2.0])}, state)
    print(f"adam step {state.t}: p = {p.data}")
