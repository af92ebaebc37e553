"""A tour of the tape-based autodiff core.

Every differentiable computation happens inside a Graph context: operations
append nodes to a tape, and backward() replays the tape in reverse to
accumulate gradients for every leaf marked requires_grad.
"""

import numpy as np

from siamcaps import Graph, Tensor, backward, grad_check
from siamcaps import autodiff as ad


def main():
    # Leaves are plain Tensors; requires_grad opts them into the sweep.
    w = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True, name="w")
    x = Tensor(np.array([1.0, 2.0, 3.0]), name="x")  # constant input

    with Graph():
        # loss = mean((tanh(w * x))^2): a tiny nonlinear pipeline
        y = ad.tanh(ad.mul(w, x))
        loss = ad.mean(ad.square(y))
        backward(loss)

    print("loss       :", loss.item())
    print("dloss/dw   :", w.grad)

    # The analytic gradient of mean(tanh(wx)^2) wrt w is
    # 2/3 * tanh(wx) * (1 - tanh(wx)^2) * x — check it by hand:
    t = np.tanh(w.data * x.data)
    analytic = 2.0 / 3.0 * t * (1.0 - t * t) * x.data
    print("analytic   :", analytic)
    print("max |diff| :", np.abs(w.grad - analytic).max())

    # grad_check compares reverse-mode against central finite differences
    # with the relative error max(|g_ad-g_fd|) / max(1, |g_ad|, |g_fd|).
    def f(w_):
        return ad.mean(ad.square(ad.tanh(ad.mul(w_, x))))

    err = grad_check(f, [Tensor(w.data.copy(), requires_grad=True)])
    print("grad_check :", err, "(should be ~1e-10)")

    # Gradients accumulate across reuse of the same tensor:
    a = Tensor(np.array([2.0]), requires_grad=True)
    with Graph():
        reused = ad.add(ad.mul(a, a), a)  # a^2 + a -> d/da = 2a + 1
        backward(ad.sum_(reused))
    print("d(a^2+a)/da:", a.grad, "(expected 5.0)")


if __name__ == "__main__":
    main()
