"""Network builders for the two synthesis stages and the adversarial losses.

Stage-I is a DCGAN pair: the generator projects the latent vector to a
4x4 map and upsamples with stride-2 transposed convolutions; the
discriminator mirrors it with stride-2 convolutions.  Stage-II refines a
Stage-I image with an encoder (conv + maxpool) / decoder (transposed
conv) generator: fresh noise is concatenated at the bottleneck and
same-resolution encoder maps are concatenated into the decoder.

Spectral normalization (when enabled) wraps every conv / transposed-conv
weight in both networks; the self-attention block is inserted at the
configured feature-map resolution.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import Tensor, concat


@dataclass
class GanConfig:
    nz: int = 100
    ngf: int = 64
    ndf: int = 64
    r1: int = 32
    r2: int = 64
    use_sn: bool = False
    use_sa: bool = False
    use_stage2: bool = False
    sa_resolution: int = 16
    image_channels: int = 1

    def __post_init__(self):
        for r, nm in ((self.r1, "r1"), (self.r2, "r2")):
            if r < 8 or r > 256 or r & (r - 1):
                raise ValueError(f"{nm} must be a power of two in [8, 256], got {r}")
        if self.r2 // self.r1 not in (1, 2) or self.r2 < self.r1:
            raise ValueError(f"r2/r1 must be 1 or 2, got r1={self.r1}, r2={self.r2}")
        if self.r1 % self.sa_resolution:
            raise ValueError(
                f"sa_resolution {self.sa_resolution} must divide r1 {self.r1}"
            )


@dataclass
class Network:
    """A Sequential (or encoder-decoder) module plus its parameters."""

    module: object
    tree: nn.ParameterTree

    def __call__(self, *inputs, training=False, **kw):
        return self.module.forward(self.tree, *inputs, training=training, **kw)


@dataclass
class GanModel:
    config: GanConfig
    g1: Network
    d1: Network
    g2: Network | None = None
    d2: Network | None = None


def _gen_channels(ngf, k):
    # channel widths from the 4x4 projection (ngf * 2^k) halving per block
    return [ngf * 2 ** (k - i) for i in range(k)]


def build_stage1(config: GanConfig, seed: int):
    """Stage-I generator/discriminator pair at resolution r1."""
    k = int(math.log2(config.r1 // 4))
    chans = _gen_channels(config.ngf, k)
    sn = config.use_sn

    glayers = [
        ("project", nn.Linear(config.nz, chans[0] * 16, sn=sn)),
        ("reshape", nn.Reshape((chans[0], 4, 4))),
        ("bn4", nn.BatchNorm2d(chans[0])),
        ("act4", nn.Activation("relu")),
    ]
    res = 4
    for i in range(k):
        cin = chans[i]
        last = i == k - 1
        cout = config.image_channels if last else chans[i + 1]
        res *= 2
        glayers.append(
            (f"up{res}", nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1, sn=sn))
        )
        if last:
            glayers.append((f"tanh{res}", nn.Activation("tanh")))
        else:
            glayers.append((f"bn{res}", nn.BatchNorm2d(cout)))
            glayers.append((f"act{res}", nn.Activation("relu")))
            if config.use_sa and res == config.sa_resolution:
                glayers.append((f"sa{res}", nn.SelfAttention(cout)))
    g1_mod = nn.Sequential("g1", glayers)

    dlayers = []
    res = config.r1
    cin = config.image_channels
    cout = config.ndf
    first = True
    while res > 4:
        res //= 2
        dlayers.append(
            (f"down{res}", nn.Conv2d(cin, cout, 4, stride=2, padding=1, sn=sn))
        )
        if not first:
            dlayers.append((f"bn{res}", nn.BatchNorm2d(cout)))
        dlayers.append((f"act{res}", nn.Activation("leaky_relu")))
        if config.use_sa and res == config.sa_resolution:
            dlayers.append((f"sa{res}", nn.SelfAttention(cout)))
        cin, cout = cout, cout * 2
        first = False
    dlayers += [
        ("out", nn.Conv2d(cin, 1, 4, stride=1, padding=0, sn=sn)),
        ("sigmoid", nn.Activation("sigmoid")),
        ("flatten", nn.Reshape((1,))),
    ]
    d1_mod = nn.Sequential("d1", dlayers)

    g1 = Network(g1_mod, g1_mod.init_parameters(seed))
    d1 = Network(d1_mod, d1_mod.init_parameters(seed + 1))
    return g1, d1


class EncoderDecoder:
    """Stage-II generator: conv/maxpool encoder over the Stage-I image,
    noise concatenated at the 4x4 bottleneck, transposed-conv decoder with
    same-resolution skip concatenations, final conv + tanh."""

    def __init__(self, config: GanConfig):
        self.name = "g2"
        self.config = config
        c = config
        sn = c.use_sn
        self.depth = int(math.log2(c.r1 // 4))  # pool steps from r1 to 4
        self.enc_chans = [min(c.ngf * 2**i, c.ngf * 8) for i in range(self.depth + 1)]
        self.enc = []
        cin = c.image_channels
        res = c.r1
        for i, cout in enumerate(self.enc_chans):
            self.enc.append(
                (f"enc{res}", nn.Conv2d(cin, cout, 3, stride=1, padding=1, sn=sn), res)
            )
            cin = cout
            if i < self.depth:
                res //= 2
        self.z_proj = nn.Linear(c.nz, 16 * c.ngf, sn=sn)
        self.up_levels = int(math.log2(c.r2 // 4))
        self.dec = []
        cin = self.enc_chans[-1] + c.ngf  # bottleneck features + noise map
        res = 4
        for i in range(self.up_levels):
            res *= 2
            cout = max(c.ngf // 2**i, 8)
            self.dec.append(
                (
                    f"dec{res}",
                    nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1, sn=sn),
                    res,
                )
            )
            cin = cout
            skip = self._skip_channels(res)
            if skip:
                cin += skip
        self.out_conv = nn.Conv2d(cin, c.image_channels, 3, stride=1, padding=1, sn=sn)

    def _skip_channels(self, res):
        if res > self.config.r1:
            return 0
        level = int(math.log2(self.config.r1 // res))
        return self.enc_chans[level]

    def init_parameters(self, seed):
        tree = nn.ParameterTree()
        for lname, layer, _ in self.enc:
            layer.init(tree, f"{self.name}/{lname}", seed)
        self.z_proj.init(tree, f"{self.name}/z_proj", seed)
        for lname, layer, _ in self.dec:
            layer.init(tree, f"{self.name}/{lname}", seed)
            tree_bn = nn.BatchNorm2d(layer.cout)
            tree_bn.init(tree, f"{self.name}/{lname}_bn", seed)
        self.out_conv.init(tree, f"{self.name}/out", seed)
        return tree

    def forward(self, tree, image, z, training=False):
        c = self.config
        if image.shape[2] != c.r1:
            raise ValueError(
                f"stage-II input resolution {image.shape[2]} != configured r1 {c.r1}"
            )
        feats = {}
        x = image
        for i, (lname, layer, res) in enumerate(self.enc):
            x = layer.forward(tree, f"{self.name}/{lname}", x, training)
            x = x.leaky_relu(0.2)
            feats[res] = x
            if i < self.depth:
                x = nn.maxpool2d(x, 2, 2)
        zmap = self.z_proj.forward(tree, f"{self.name}/z_proj", z, training)
        zmap = zmap.reshape(z.shape[0], c.ngf, 4, 4)
        x = concat([x, zmap], axis=1)
        for lname, layer, res in self.dec:
            x = layer.forward(tree, f"{self.name}/{lname}", x, training)
            x = nn.BatchNorm2d(layer.cout).forward(
                tree, f"{self.name}/{lname}_bn", x, training
            )
            x = x.relu()
            if res in feats:
                x = concat([x, feats[res]], axis=1)
        x = self.out_conv.forward(tree, f"{self.name}/out", x, training)
        return x.tanh()


def build_stage2(config: GanConfig, seed: int):
    """Stage-II generator/discriminator pair; d2 is the d1 architecture at r2."""
    if not config.use_stage2:
        raise ValueError("build_stage2 called with use_stage2 disabled")
    g2_mod = EncoderDecoder(config)
    g2 = Network(g2_mod, g2_mod.init_parameters(seed))

    d_cfg = dataclasses.replace(config, r1=config.r2, use_stage2=False)
    _, d2 = build_stage1(d_cfg, seed + 1)
    d2.module.name = "d2"
    # rebuild the tree under the d2 namespace
    d2 = Network(d2.module, d2.module.init_parameters(seed + 1))
    return g2, d2


def build_gan(config: GanConfig, seed: int) -> GanModel:
    g1, d1 = build_stage1(config, seed)
    g2 = d2 = None
    if config.use_stage2:
        g2, d2 = build_stage2(config, seed + 1000)
    return GanModel(config=config, g1=g1, d1=d1, g2=g2, d2=d2)


# -- adversarial losses (Eq. realized with batch means) ----------------------


def loss_discriminator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-mean(log D(x)) - mean(log(1 - D(G(z))))."""
    if d_real.shape[0] == 0 or d_fake.shape[0] == 0:
        raise ValueError("loss_discriminator: empty batch")
    one = Tensor(np.ones(d_fake.shape, d_fake.dtype))
    return -(d_real.log().mean()) - ((one - d_fake).log().mean())


def loss_generator(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss: -mean(log D(G(z)))."""
    if d_fake.shape[0] == 0:
        raise ValueError("loss_generator: empty batch")
    return -(d_fake.log().mean())
