import math

import torch
from torch import nn


class GradReverse(torch.autograd.Function):
    """Identity on the forward pass; multiplies the gradient by -strength."""

    @staticmethod
    def forward(ctx, x, strength):
        ctx.strength = strength
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.strength, None


def grad_reverse(x, strength=1.0):
    return GradReverse.apply(x, strength)


class LinearHead(nn.Linear):
    """Classification module h(.) on top of the shared features."""

    def reset_parameters_with(self, generator):
        # same bounds as nn.Linear's default init, drawn from a fixed generator
        bound = 1.0 / math.sqrt(self.in_features)
        with torch.no_grad():
            self.weight.uniform_(-bound, bound, generator=generator)
            self.bias.uniform_(-bound, bound, generator=generator)
