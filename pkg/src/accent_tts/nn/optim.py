"""Adam with the inverse-square-root warmup schedule."""
import numpy as np


def noam_lr(step, d_model, warmup, scale=1.0):
    """Learning rate at 1-based ``step``: scale · d^-0.5 · min(step^-0.5, step · warmup^-1.5)."""
    step = max(step, 1)
    return scale * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


class Adam:
    def __init__(self, params, d_model, warmup=4000, lr_scale=1.0,
                 betas=(0.9, 0.98), eps=1e-9, grad_clip=None):
        self.params = params
        self.d_model = d_model
        self.warmup = warmup
        self.lr_scale = lr_scale
        self.b1, self.b2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    @property
    def lr(self):
        return noam_lr(self.step_count + 1, self.d_model, self.warmup, self.lr_scale)

    def grad_norm(self):
        return float(np.sqrt(sum(float((t.grad**2).sum()) for _, t in self.params.items()
                                 if t.grad is not None)))

    def step(self):
        lr = self.lr
        self.step_count += 1
        clip = 1.0
        if self.grad_clip is not None:
            norm = self.grad_norm()
            if norm > self.grad_clip:
                clip = self.grad_clip / norm
        c1 = 1.0 - self.b1**self.step_count
        c2 = 1.0 - self.b2**self.step_count
        for n, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad * clip
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return lr

    def state(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}
