"""Tour of the reverse-mode Tensor core.

Builds a tiny two-layer network by hand, backpropagates a scalar loss, and
cross-checks every gradient against central finite differences.
"""

import numpy as np

from skelstream import Tensor, grad_check, matmul, relu, softmax


def main():
    rng = np.random.default_rng(0)

    # forward graph: x -> relu(x W1) -> softmax(. W2) -> mean log prob
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w1 = Tensor(rng.standard_normal((3, 8)) * 0.5, requires_grad=True)
    w2 = Tensor(rng.standard_normal((8, 5)) * 0.5, requires_grad=True)

    hidden = relu(matmul(x, w1))
    probs = softmax(matmul(hidden, w2), axis=-1)
    loss = (probs * probs).mean()
    loss.backward()

    print(f"loss = {loss.item():.6f}")
    print(f"dloss/dx[0] = {np.array2string(x.grad[0], precision=4)}")
    print(f"|dloss/dW1| mean = {np.abs(w1.grad).mean():.2e}")

    # the same graph, checked against finite differences
    def f(xv, av, bv):
        return (softmax(matmul(relu(matmul(xv, av)), bv), axis=-1) ** 2).mean()

    report = grad_check(f, [x, w1, w2], eps=1e-6)
    print(f"finite-difference check: max rel err {report.max_rel_err:.2e} "
          f"over {report.entries_checked} entries")
    assert report.ok(1e-5)

    # gradients do not flow where the graph is cut
    a = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    (a * b.detach()).sum().backward()
    print(f"gradient through detach: a {'set' if a.grad is not None else 'none'}, "
          f"b {'leaked' if b.grad is not None else 'none (cut)'}")


if __name__ == "__main__":
    main()
