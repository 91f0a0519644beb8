"""Adam with step-decay milestones, and the shared mini-batch schedule."""
from dataclasses import dataclass

import numpy as np

from .. import kernels


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    milestones: tuple = (5, 20, 40, 70, 90)
    decay: float = 0.3
    batch_size: int = 16


class Adam:
    """Adam with L2 weight decay folded into the gradient.

    The learning rate is multiplied by ``decay`` at each milestone epoch,
    where ``epoch = step // steps_per_epoch``.
    """

    def __init__(self, cfg=None, steps_per_epoch=1):
        self.cfg = cfg or OptimConfig()
        self.steps_per_epoch = max(1, int(steps_per_epoch))
        self.m = {}
        self.v = {}
        self.step = 0

    def lr_at(self, step):
        epoch = step // self.steps_per_epoch
        passed = sum(1 for ms in self.cfg.milestones if epoch >= ms)
        return self.cfg.lr * self.cfg.decay ** passed

    def update(self, params, grads):
        """In-place update of every array in ``params`` that has a gradient."""
        c = self.cfg
        lr = self.lr_at(self.step)
        self.step += 1
        bc1 = 1 - c.beta1 ** self.step
        bc2 = 1 - c.beta2 ** self.step
        adam = kernels.active().adam
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros(p.size)
                self.v[name] = np.zeros(p.size)
            flat = p.reshape(-1)
            if not np.shares_memory(flat, p):
                raise ValueError(f"parameter {name} must be contiguous to update in place")
            g = np.ascontiguousarray(g, dtype=np.float64).reshape(-1)
            adam(flat, g, self.m[name], self.v[name], lr, c.beta1, c.beta2, c.eps,
                 c.weight_decay, bc1, bc2)
        return lr


class BatchSchedule:
    """Stateless mini-batch indices: pass ``k`` uses a fresh seeded permutation.

    Every client draws from the same schedule, so all of them work on the
    same window indices (and time slots) at every step.  The trailing
    partial batch of a pass is dropped to keep message shapes fixed.
    """

    def __init__(self, num_windows, batch_size, seed):
        if num_windows < batch_size:
            batch_size = num_windows
        self.num_windows = num_windows
        self.batch_size = batch_size
        self.seed = seed
        self.per_pass = num_windows // batch_size

    def _perm(self, k):
        rng = np.random.Generator(np.random.Philox(key=[self.seed, k]))
        return rng.permutation(self.num_windows)

    def batch(self, step):
        k, j = divmod(step, self.per_pass)
        return np.sort(self._perm(k)[j * self.batch_size:(j + 1) * self.batch_size])
