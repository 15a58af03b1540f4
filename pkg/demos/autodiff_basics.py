"""
The tensor engine in a few lines
================================

Every op records a backward closure; ``backward()`` walks the tape in
reverse.  Finite differences keep the hand-written gradients honest.
"""
import numpy as np

from tablefill import tensor as T

rng = np.random.default_rng(0)

x = T.tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = T.glorot(rng, 3, 2)
b = T.zeros((2,))

y = T.relu(T.linear(x, w, b))
loss = T.total(T.hadamard(y, y))
loss.backward()
print("loss", loss.item())
print("d loss / d b", b.grad)

# a shared subexpression collects gradient from both uses
z = T.tensor([3.0], requires_grad=True)
T.total(T.add(z, z)).backward()
print("d(z + z)/dz =", z.grad[0])

# compare against central differences
err = T.finite_diff_check(lambda x, w, b: T.total(T.tanh(T.linear(x, w, b))), [x, w, b])
print(f"max relative error {err:.2e}")

# masked softmax: a fully masked row comes out as zeros, not NaN
probs = T.softmax_last(T.tensor(np.zeros((2, 4))), mask=np.array([[1, 1, 0, 0], [0, 0, 0, 0]], bool))
print(probs.data)

# Adam walking down a bowl
p = T.tensor([1.0, 1.0], requires_grad=True)
opt = T.Adam([p], lr=0.05)
for step in range(200):
    opt.zero_grad()
    T.total(T.hadamard(p, p)).backward()
    opt.step()
print("after 200 Adam steps:", p.data)
