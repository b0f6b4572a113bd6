"""Central finite-difference oracle shared by gradient tests."""
import numpy as np


def numeric_grad(fn, param, index, h=1e-5):
    """d fn() / d param.data[index] by central differences; restores the value."""
    flat = param.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    up = fn()
    flat[index] = orig - h
    down = fn()
    flat[index] = orig
    return (up - down) / (2 * h)


def rel_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
