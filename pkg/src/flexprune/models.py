"""Desk-scale VGG-style model builder."""

from __future__ import annotations

import numpy as np

from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU, SoftmaxCrossEntropyHead
from .network import Network


def build_cnn(
    image_size: int = 16,
    in_channels: int = 1,
    classes: int = 10,
    conv_channels: tuple[int, ...] = (8, 16),
    dense_units: int = 384,
    expand_channels: int = 0,
    cut_index: int = 3,
    seed: int = 0,
) -> Network:
    """Conv/pool blocks followed by two dense layers and a softmax head.

    Each conv block halves the spatial extent; the logits layer is never
    pruned. The default configuration has ~100k parameters.

    expand_channels, when nonzero, inserts a 1x1 convolution that widens
    the final feature map before the classifier. This shifts the bulk of
    the parameter count into the first dense layer, the same top-heavy
    profile the large fc-dominated architectures have, without the compute
    cost of wide 3x3 convolutions.
    """
    rng = np.random.default_rng(seed)
    layers = []
    ch = in_channels
    size = image_size
    for out_ch in conv_channels:
        layers += [Conv2D(ch, out_ch, 3, 3, stride=1, pad=1, rng=rng), ReLU(), MaxPool2D(2)]
        ch = out_ch
        size //= 2
    if expand_channels:
        # linear widening: no ReLU, so the extra stage costs parameters
        # and bandwidth but cannot strand units dead during training
        layers += [Conv2D(ch, expand_channels, 1, 1, rng=rng)]
        ch = expand_channels
    layers.append(Flatten())
    layers += [Dense(ch * size * size, dense_units, rng=rng), ReLU()]
    logits = Dense(dense_units, classes, rng=rng)
    # zero-init logits: the head starts at the uniform distribution and
    # calibrates before feature gradients grow, instead of random early
    # logits driving hidden ReLU units permanently dead
    logits.params["w"][:] = 0.0
    layers += [logits, SoftmaxCrossEntropyHead(classes)]
    return Network(layers, (in_channels, image_size, image_size), cut_index=cut_index)
