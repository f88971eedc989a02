from __future__ import annotations

import numpy as np

from fixsearch.nn import functional as F
from fixsearch.nn.tensor import Tensor


def kaiming_uniform(rng, shape):
    """He/Kaiming uniform init for ReLU nets: U(-b, b) with b = sqrt(6 / fan_in)."""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel=3, dilation=1, rng=None, name="conv"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.dilation = dilation
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel)), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, dilation=self.dilation, padding="same")

    def parameters(self):
        return [self.weight, self.bias]
