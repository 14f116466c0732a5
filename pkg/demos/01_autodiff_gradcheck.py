"""Reverse-mode differentiation on a small expression, checked by finite differences.

Run: python demos/01_autodiff_gradcheck.py
"""

import numpy as np

from rdmn import autodiff as ad
from rdmn.autodiff import Parameter, Tape
from rdmn.gradcheck import numerical_gradient, relative_error

rng = np.random.default_rng(0)
W = Parameter(rng.normal(size=(3, 4)), name="W")
x = rng.normal(size=4)

# A one-layer attention over three "cells": softmax(tanh(W x)).
def objective():
    scores = ad.tanh(ad.matmul(W, x))
    return ad.pick(ad.softmax(scores), 0)

# Operations are only recorded while a tape is active.
with Tape() as tape:
    out = objective()
    tape.backward(out, [W])
print("p(cell 0) =", out.item())
print("dW from backward():\n", W.grad)

numeric = numerical_gradient(lambda: objective().item(), W.value)
print("max relative error vs central differences:", relative_error(W.grad, numeric))
