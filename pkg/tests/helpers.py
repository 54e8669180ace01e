"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from bocl.data import LabeledSet
from bocl.network import LayerSpec, NetSpec, expand, new_base


def blobs(n, n_features, n_classes, seed, spread=0.3):
    """Separable Gaussian blobs as a LabeledSet of flat images."""
    r = np.random.default_rng(seed)
    centers = r.uniform(0.2, 0.8, size=(n_classes, n_features))
    labels = np.arange(n) % n_classes
    x = np.clip(centers[labels] + spread * r.standard_normal((n, n_features)) * 0.1, 0, 1)
    return LabeledSet(x.reshape(n, n_features, 1, 1), labels, n_classes)


TINY_CONV_SPEC = NetSpec(
    (6, 6, 2),
    (LayerSpec("conv2d", 3, kernel=3), LayerSpec("conv2d", 2, kernel=2), LayerSpec("dense", 4)),
    3,
)


def tiny_conv_steps(seed=0):
    """Yield ``(net, task)`` for a conv base and two expansions, so every gate kind exists.

    Each network is yielded before the next expansion freezes it.
    """
    rng = np.random.default_rng(seed)
    net = new_base(TINY_CONV_SPEC, rng)
    yield net, 1
    for task, z in ((2, [2, 1, 2]), (3, [1, 0, 2])):
        net = expand(net, task, z, rng)
        yield net, task


def tiny_conv_nets(seed=0):
    return [net for net, _ in tiny_conv_steps(seed)]


def finite_difference_errors(net, task, x, labels, eps=1e-4):
    """Worst relative error per trainable array of ``task`` (central differences)."""
    prepared = net.prepare(x)
    _, grads = net.loss_and_grads(task, prepared, labels)
    out = {}
    for key, arr in net.trainable(task).items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp, _ = net.loss_and_grads(task, prepared, labels)
            arr[idx] = old - eps
            lm, _ = net.loss_and_grads(task, prepared, labels)
            arr[idx] = old
            fd[idx] = (lp - lm) / (2 * eps)
        denom = np.maximum(np.abs(fd) + np.abs(grads[key]), 1e-7)
        out[key] = float(np.max(np.abs(fd - grads[key]) / denom))
    return out
