"""Independent reference implementations shared by the unit and acceptance tests."""

import itertools

import numpy as np

from depthlift import net


def brute_kendall(x, y):
    """O(n^2) pair counting; returns (concordant, discordant, tau_b)."""
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        sx, sy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if sx == 0 and sy == 0:
            continue
        if sx == 0:
            tx += 1
        elif sy == 0:
            ty += 1
        elif sx == sy:
            c += 1
        else:
            d += 1
    return c, d, (c - d) / np.sqrt((c + d + tx) * (c + d + ty))


def train_loss(params, x, y, seed):
    # a fresh generator per call replays the same dropout masks
    out, _ = net.forward(params, x, "train", np.random.default_rng(seed))
    return net.loss_reconstruction(out, y, params.config.n_joints)


def _loss_and_signs(params, x, y, seed):
    out, cache = net.forward(params, x, "train", np.random.default_rng(seed))
    signs = [layer[4] > 0 for layer in cache["layers"]]
    return net.loss_reconstruction(out, y, params.config.n_joints), signs


def _same_signs(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(params, x, y, seed=0, h=1e-5, floor=1e-6, min_h=1e-9):
    """Max relative error between analytic and central-difference gradients over every entry.

    ``floor`` keeps exactly-zero gradients (biases feeding batch norm) from
    dividing by zero. A central difference whose two evaluations put any ReLU
    input on different sides of zero straddles a kink, so the step is shrunk
    until both sides share the activation pattern of the unperturbed point.
    """
    out, cache = net.forward(params, x, "train", np.random.default_rng(seed))
    analytic = net.backward(params, cache, out, y)
    base = [layer[4] > 0 for layer in cache["layers"]]
    worst = 0.0
    for k, w in params.weights.items():
        num = np.empty_like(w)
        flat = w.reshape(-1)
        for i in range(flat.size):
            old, step = flat[i], h
            while True:
                flat[i] = old + step
                up, s_up = _loss_and_signs(params, x, y, seed)
                flat[i] = old - step
                down, s_down = _loss_and_signs(params, x, y, seed)
                flat[i] = old
                if step <= min_h or (_same_signs(s_up, base) and _same_signs(s_down, base)):
                    break
                step /= 10.0
            num.reshape(-1)[i] = (up - down) / (2 * step)
        a = analytic[k]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        worst = max(worst, float(rel.max()))
    return worst
