"""Run configuration: a flat key = value text file covering every knob.

Unknown keys are rejected; every command writes its fully resolved
configuration next to its outputs so a run can be reproduced from the
output directory alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .gan import GanConfig


@dataclass
class RunConfig:
    # dataset
    n_diseased: int = 38
    n_healthy: int = 17
    resolution: int = 64  # dataset / classifier / metric resolution (= r2)
    data_dir: str = ""
    crop_fraction: float = 1.0
    # architecture
    nz: int = 100
    ngf: int = 64
    ndf: int = 64
    r1: int = 32
    r2: int = 64
    sa_resolution: int = 16
    # training
    batch_size: int = 16
    stage1_steps: int = 2000
    stage2_steps: int = 2000
    classifier_steps: int = 1000
    classifier_lr: float = 1e-3
    # protocol
    test_per_class: int = 7
    target_per_class: int = 500
    synth_pool: int = 400
    repeats: int = 5
    variants: str = "dcgan,dcgan_ours,dcgan_sn,dcgan_sn_ours,dcgan_sn_sa,dcgan_sn_sa_ours"
    # metrics
    is_splits: int = 0  # 0 = choose from pool size
    seed: int = 0

    def gan_config(self, variant: str) -> GanConfig:
        use_stage2 = variant.endswith("_ours")
        base = variant[: -len("_ours")] if use_stage2 else variant
        if base not in ("dcgan", "dcgan_sn", "dcgan_sn_sa"):
            raise ValueError(f"unknown variant {variant!r}")
        return GanConfig(
            nz=self.nz,
            ngf=self.ngf,
            ndf=self.ndf,
            r1=self.r1,
            r2=self.r2 if use_stage2 else self.r1,
            use_sn="sn" in base.split("_"),
            use_sa="sa" in base.split("_"),
            use_stage2=use_stage2,
            sa_resolution=self.sa_resolution,
        )

    def variant_list(self):
        return [v.strip() for v in self.variants.split(",") if v.strip()]

    def save(self, path):
        with open(path, "w") as fh:
            for k, v in asdict(self).items():
                fh.write(f"{k} = {v}\n")

    @classmethod
    def load(cls, path, overrides=None):
        known = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        kwargs = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                kwargs[key] = _parse(raw, getattr(defaults, key), key)
        if overrides:
            kwargs.update(overrides)
        return cls(**kwargs)


def _parse(raw, default, key):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw
