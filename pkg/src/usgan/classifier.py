"""Compact CNN used both as the binary classifier and as the feature
extractor behind the GAN-quality metrics.

Four stride-2 conv blocks, global average pooling (64-d feature vector by
default) and a linear softmax head.
"""

from __future__ import annotations

from . import nn
from .gan import Network


class CompactCNN:
    def __init__(self, resolution, channels=(8, 16, 32, 64), n_classes=2):
        if resolution // 2 ** len(channels) < 1:
            raise ValueError(f"resolution {resolution} too small for {len(channels)} blocks")
        self.name = "clf"
        self.resolution = resolution
        self.channels = tuple(channels)
        self.n_classes = n_classes
        self.blocks = []
        cin = 1
        for i, cout in enumerate(self.channels):
            conv = nn.Conv2d(cin, cout, 4, stride=2, padding=1)
            bn = nn.BatchNorm2d(cout) if i > 0 else None
            self.blocks.append((f"block{i}", conv, bn))
            cin = cout
        self.head = nn.Linear(cin, n_classes)
        self.feature_dim = cin

    def init_parameters(self, seed):
        tree = nn.ParameterTree()
        for bname, conv, bn in self.blocks:
            conv.init(tree, f"{self.name}/{bname}/conv", seed)
            if bn is not None:
                bn.init(tree, f"{self.name}/{bname}/bn", seed)
        self.head.init(tree, f"{self.name}/head", seed)
        return tree

    def forward(self, tree, x, training=False, return_features=False):
        if x.shape[2] != self.resolution or x.shape[3] != self.resolution:
            raise ValueError(
                f"classifier expects {self.resolution}x{self.resolution} input, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        for bname, conv, bn in self.blocks:
            x = conv.forward(tree, f"{self.name}/{bname}/conv", x, training)
            if bn is not None:
                x = bn.forward(tree, f"{self.name}/{bname}/bn", x, training)
            x = x.leaky_relu(0.2)
        feats = x.mean(axes=(2, 3))  # global average pool -> (B, feature_dim)
        logits = self.head.forward(tree, f"{self.name}/head", feats, training)
        if return_features:
            return feats, logits
        return logits


def build_classifier(resolution, seed, channels=(8, 16, 32, 64), n_classes=2):
    mod = CompactCNN(resolution, channels, n_classes)
    return Network(mod, mod.init_parameters(seed))
