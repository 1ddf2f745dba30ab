"""Adam optimizer and gradient-norm clipping for Tensor parameters."""

import numpy as np


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return np.sqrt(total)


def clip_grad_norm(params, max_norm):
    """Scale all gradients in place so their global norm is <= max_norm.
    Returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Adam:
    """Adam with bias correction over named parameters."""

    def __init__(self, named_params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = {
            name: np.zeros_like(p.data) for name, p in self.named_params
        }
        self.second_moment = {
            name: np.zeros_like(p.data) for name, p in self.named_params
        }

    def step(self, lr=None):
        if lr is None:
            lr = self.lr
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)

    def state_arrays(self, prefix="adam."):
        # copies, so a held snapshot is immune to further optimizer steps
        out = {prefix + "step": np.array([float(self.step_count)])}
        for name in self.first_moment:
            out[prefix + "m." + name] = self.first_moment[name].copy()
            out[prefix + "v." + name] = self.second_moment[name].copy()
        return out

    def load_state_arrays(self, arrays, prefix="adam."):
        self.step_count = int(arrays[prefix + "step"][0])
        for name in self.first_moment:
            self.first_moment[name] = np.array(arrays[prefix + "m." + name])
            self.second_moment[name] = np.array(arrays[prefix + "v." + name])
