"""Procedural B-mode liver phantoms, image I/O and dataset protocol.

Each subject owns an anatomy (background echogenicity, vessel layout,
class-dependent modifiers) drawn from its anatomy seed; ten views share
the anatomy but vary translation and speckle realization.  A view is
rendered as: scatterer field -> convolution with a modulated Gaussian
point-spread function -> envelope magnitude -> depth attenuation ->
log compression to 8 bits.

The diseased class raises mean echogenicity, adds a depth-wise
attenuation gradient and washes out vessel contrast; the healthy class
shows 1-3 dark elliptical vessel cross-sections.  Physics fidelity is
deliberately low: speckle statistics and class-dependent brightness are
what matter here, not beamforming.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import seeds

HEALTHY, DISEASED = 0, 1
LABEL_NAMES = {HEALTHY: "healthy", DISEASED: "diseased"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}

VIEWS_PER_SUBJECT = 10
PIXEL_SPACING_MM = 0.373
SUPPORTED_RESOLUTIONS = (32, 64, 128, 256)

# rendering constants (tuned so the class brightness gap stays >= 15/255
# in expectation while leaving per-subject overlap)
DYNAMIC_RANGE_DB = 40.0
DB_OFFSET = 26.0
DISEASED_GAIN_DB = 6.0
DISEASED_ATTENUATION_DB = 6.0  # total drop across the image depth
HEALTHY_VESSEL_CONTRAST = 0.06
DISEASED_VESSEL_CONTRAST = 0.45


@dataclass
class Subject:
    id: int
    label: int
    anatomy_seed: int
    images: np.ndarray  # (10, 1, R, R) float32 in [-1, 1]


@dataclass
class PhantomDataset:
    subjects: list
    resolution: int
    pixel_spacing_mm: float = PIXEL_SPACING_MM
    provenance: dict = field(default_factory=dict)

    def images_and_labels(self, subject_ids=None):
        """Stacked (N,1,R,R) images with labels and owning subject ids."""
        xs, ys, sids = [], [], []
        for s in self.subjects:
            if subject_ids is not None and s.id not in subject_ids:
                continue
            xs.append(s.images)
            ys.extend([s.label] * s.images.shape[0])
            sids.extend([s.id] * s.images.shape[0])
        return np.concatenate(xs), np.asarray(ys), np.asarray(sids)


@dataclass
class SplitPlan:
    train_subjects: set
    test_subjects: set
    repeat_index: int
    seed: int


@dataclass
class DatasetConfig:
    n_diseased: int = 38
    n_healthy: int = 17
    resolution: int = 64


def _psf(resolution):
    """Modulated Gaussian point-spread function and its energy norm."""
    scale = resolution / 64.0
    sigma_lat = 1.6 * scale
    sigma_ax = 1.0 * scale
    freq = 0.22 / scale  # axial carrier, cycles per pixel
    half = int(np.ceil(4 * max(sigma_lat, sigma_ax)))
    y, x = np.mgrid[-half : half + 1, -half : half + 1]
    env = np.exp(-(y**2) / (2 * sigma_ax**2) - (x**2) / (2 * sigma_lat**2))
    psf = env * np.exp(2j * np.pi * freq * y)
    return psf, np.sqrt((np.abs(psf) ** 2).sum())


def _vessel_mask(resolution, vessels, dy, dx):
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    mask = np.zeros((resolution, resolution), bool)
    for cy, cx, ry, rx, theta in vessels:
        cy, cx = cy + dy, cx + dx
        c, s = np.cos(theta), np.sin(theta)
        u = (yy - cy) * c + (xx - cx) * s
        v = -(yy - cy) * s + (xx - cx) * c
        mask |= (u / ry) ** 2 + (v / rx) ** 2 <= 1.0
    return mask


def generate_subject(label, anatomy_seed, resolution):
    """Render the 10 views of one simulated liver.

    Deterministic in (label, anatomy_seed, resolution)."""
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ValueError(
            f"unsupported resolution {resolution}; choose one of {SUPPORTED_RESOLUTIONS}"
        )
    if label not in (HEALTHY, DISEASED):
        raise ValueError(f"unknown label {label}")
    arng = seeds.rng(anatomy_seed, "anatomy")
    base_rho = 1.0 * float(arng.uniform(0.85, 1.15))
    density = float(arng.uniform(0.75, 1.0))
    n_vessels = int(arng.integers(1, 4))
    r = resolution
    vessels = [
        (
            float(arng.uniform(0.2 * r, 0.8 * r)),
            float(arng.uniform(0.2 * r, 0.8 * r)),
            float(arng.uniform(0.05 * r, 0.14 * r)),
            float(arng.uniform(0.04 * r, 0.10 * r)),
            float(arng.uniform(0, np.pi)),
        )
        for _ in range(n_vessels)
    ]
    if label == DISEASED:
        gain = 10.0 ** (DISEASED_GAIN_DB * float(arng.uniform(0.8, 1.2)) / 10.0)
        vessel_contrast = DISEASED_VESSEL_CONTRAST
        attenuation_db = DISEASED_ATTENUATION_DB * float(arng.uniform(0.7, 1.3))
    else:
        gain = 1.0
        vessel_contrast = HEALTHY_VESSEL_CONTRAST
        attenuation_db = 0.0

    psf, psf_norm = _psf(r)
    depth = (np.arange(r) / max(r - 1, 1))[:, None]
    views = np.empty((VIEWS_PER_SUBJECT, 1, r, r), np.float32)
    for view in range(VIEWS_PER_SUBJECT):
        vrng = seeds.rng(anatomy_seed, f"view/{view}")
        dy = float(vrng.uniform(-0.08 * r, 0.08 * r))
        dx = float(vrng.uniform(-0.08 * r, 0.08 * r))
        rho = np.full((r, r), base_rho * gain)
        rho[_vessel_mask(r, vessels, dy, dx)] *= vessel_contrast
        amp = np.sqrt(rho * density)
        scat = amp * (vrng.standard_normal((r, r)) + 1j * vrng.standard_normal((r, r)))
        field_ft = np.fft.fft2(scat) * np.fft.fft2(
            np.fft.ifftshift(_pad_center(psf, r))
        )
        envelope = np.abs(np.fft.ifft2(field_ft)) / psf_norm
        if attenuation_db:
            envelope = envelope * 10.0 ** (-attenuation_db * depth / 20.0)
        db = 20.0 * np.log10(np.maximum(envelope, 1e-8))
        pix = np.clip((db + DB_OFFSET) / DYNAMIC_RANGE_DB, 0.0, 1.0)
        u8 = np.floor(pix * 255.0 + 0.5).astype(np.uint8)
        views[view, 0] = to_unit(u8)
    return Subject(id=-1, label=label, anatomy_seed=anatomy_seed, images=views)


def _pad_center(psf, size):
    out = np.zeros((size, size), complex)
    h, w = psf.shape
    if h > size or w > size:
        cy, cx = h // 2, w // 2
        half = size // 2
        psf = psf[cy - half : cy + half, cx - half : cx + half]
        h, w = psf.shape
    top = (size - h) // 2
    left = (size - w) // 2
    out[top : top + h, left : left + w] = psf
    return out


def to_unit(u8):
    """uint8 [0,255] -> float32 [-1,1]."""
    return (u8.astype(np.float32) / 127.5) - 1.0


def from_unit(x):
    """float [-1,1] -> uint8, round half up."""
    return np.clip(np.floor((x + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def generate_dataset(config: DatasetConfig, master_seed):
    """Generate the full subject-grouped phantom corpus in memory."""
    if config.n_diseased < 1 or config.n_healthy < 1:
        raise ValueError("need at least one subject per class")
    subjects = []
    sid = 0
    for label, count in ((DISEASED, config.n_diseased), (HEALTHY, config.n_healthy)):
        for i in range(count):
            s_seed = seeds.derive(master_seed, f"subject/{LABEL_NAMES[label]}/{i}")
            subj = generate_subject(label, s_seed, config.resolution)
            subj.id = sid
            sid += 1
            subjects.append(subj)
    return PhantomDataset(
        subjects=subjects,
        resolution=config.resolution,
        provenance={
            "master_seed": master_seed,
            "n_diseased": config.n_diseased,
            "n_healthy": config.n_healthy,
            "resolution": config.resolution,
        },
    )


# -- PGM (P5) I/O -------------------------------------------------------------


class PgmError(ValueError):
    pass


def write_pgm(path, u8):
    if u8.dtype != np.uint8 or u8.ndim != 2:
        raise PgmError(f"write_pgm expects a 2-d uint8 array, got {u8.dtype} {u8.shape}")
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(u8.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmError(f"{path}: truncated header at byte {pos}")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise PgmError(f"{path}: not a P5 file (magic {fields[0]!r} at byte 0)")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise PgmError(f"{path}: malformed header field near byte {pos}")
    if maxval != 255:
        raise PgmError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    payload = data[pos : pos + w * h]
    if len(payload) != w * h:
        raise PgmError(
            f"{path}: truncated payload at byte {pos + len(payload)} "
            f"(expected {w * h} bytes)"
        )
    return np.frombuffer(payload, np.uint8).reshape(h, w)


def write_dataset(dataset: PhantomDataset, out_dir):
    """Write every view as PGM plus the manifest and provenance record.

    Manifest lines: subject_id,label,view_index,relative_path,sha256."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = []
    for s in dataset.subjects:
        for v in range(s.images.shape[0]):
            rel = f"images/s{s.id:03d}_v{v}.pgm"
            u8 = from_unit(s.images[v, 0])
            write_pgm(os.path.join(out_dir, rel), u8)
            digest = hashlib.sha256(open(os.path.join(out_dir, rel), "rb").read()).hexdigest()
            lines.append(f"{s.id},{LABEL_NAMES[s.label]},{v},{rel},{digest}")
    tmp = os.path.join(out_dir, "manifest.txt.tmp")
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, os.path.join(out_dir, "manifest.txt"))
    with open(os.path.join(out_dir, "provenance.txt"), "w") as fh:
        for k, v in sorted(dataset.provenance.items()):
            fh.write(f"{k} = {v}\n")


def load_dataset(out_dir):
    """Rebuild a PhantomDataset from a manifest directory."""
    manifest = os.path.join(out_dir, "manifest.txt")
    per_subject = {}
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            sid, label, view, rel, _sha = line.split(",")
            per_subject.setdefault(int(sid), (LABEL_CODES[label], {}))[1][int(view)] = rel
    subjects = []
    resolution = None
    for sid in sorted(per_subject):
        label, views = per_subject[sid]
        imgs = []
        for v in sorted(views):
            u8 = read_pgm(os.path.join(out_dir, views[v]))
            imgs.append(to_unit(u8)[None])
        images = np.stack(imgs)
        resolution = images.shape[-1]
        subjects.append(Subject(id=sid, label=label, anatomy_seed=0, images=images))
    provenance = {}
    prov_path = os.path.join(out_dir, "provenance.txt")
    if os.path.exists(prov_path):
        with open(prov_path) as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.split("=", 1)
                    provenance[k.strip()] = v.strip()
    return PhantomDataset(subjects=subjects, resolution=resolution, provenance=provenance)


# -- split protocol -----------------------------------------------------------


def split_dataset(dataset: PhantomDataset, seed, repeat_index, test_per_class=7):
    """Sample ``test_per_class`` test subjects per class; the remainder train.

    Deterministic in (seed, repeat_index); subject-grouped by construction."""
    by_class = {HEALTHY: [], DISEASED: []}
    for s in dataset.subjects:
        by_class[s.label].append(s.id)
    for label, ids in by_class.items():
        if len(ids) < test_per_class + 1:
            raise ValueError(
                f"not enough {LABEL_NAMES[label]} subjects: {len(ids)} "
                f"(need > {test_per_class})"
            )
    r = seeds.rng(seed, f"split/{repeat_index}")
    test = set()
    for label in (HEALTHY, DISEASED):
        ids = sorted(by_class[label])
        test.update(r.choice(ids, size=test_per_class, replace=False).tolist())
    train = {s.id for s in dataset.subjects} - test
    return SplitPlan(
        train_subjects=train, test_subjects=test, repeat_index=repeat_index, seed=seed
    )


class PoolExhausted(ValueError):
    pass


def assemble_augmented_trainset(
    real_images,
    real_labels,
    synth_diseased,
    synth_healthy,
    target_per_class=500,
):
    """All real training images topped up with synthetic ones to exactly
    ``target_per_class`` per class.

    Returns (images, labels, provenance) where provenance is per-class
    (n_real, n_synthetic) counts."""
    real_labels = np.asarray(real_labels)
    pools = {DISEASED: synth_diseased, HEALTHY: synth_healthy}
    parts, labels, provenance = [], [], {}
    for label in (DISEASED, HEALTHY):
        real = real_images[real_labels == label]
        need = target_per_class - real.shape[0]
        if need < 0:
            raise ValueError(
                f"{LABEL_NAMES[label]}: {real.shape[0]} real images exceed "
                f"target {target_per_class}"
            )
        pool = pools[label]
        if pool.shape[0] < need:
            raise PoolExhausted(
                f"{LABEL_NAMES[label]}: need {need} synthetic images, pool has "
                f"{pool.shape[0]} (short {need - pool.shape[0]})"
            )
        parts.append(real)
        labels.extend([label] * real.shape[0])
        if need:
            parts.append(pool[:need])
            labels.extend([label] * need)
        provenance[LABEL_NAMES[label]] = (int(real.shape[0]), int(need))
    return np.concatenate(parts), np.asarray(labels), provenance


# -- crop / resize ------------------------------------------------------------


def center_crop_resize(image, crop_fraction, out_resolution, mode="bilinear"):
    """Central square crop by ``crop_fraction`` then separable resampling."""
    if not 0.0 < crop_fraction <= 1.0:
        raise ValueError(f"crop_fraction must be in (0, 1], got {crop_fraction}")
    if out_resolution < 2:
        raise ValueError(f"out_resolution must be >= 2, got {out_resolution}")
    h, w = image.shape
    ch = int(round(h * crop_fraction))
    cw = int(round(w * crop_fraction))
    if ch < 2 or cw < 2:
        raise ValueError(f"crop of {ch}x{cw} pixels is degenerate")
    top = (h - ch) // 2
    left = (w - cw) // 2
    cropped = image[top : top + ch, left : left + cw]
    return _resize(_resize(cropped, out_resolution, 0, mode), out_resolution, 1, mode)


def _resize(img, out_size, axis, mode):
    in_size = img.shape[axis]
    if in_size == out_size:
        return np.asarray(img, np.float32)
    # half-pixel-centre coordinate mapping
    coords = (np.arange(out_size) + 0.5) * in_size / out_size - 0.5
    img = np.moveaxis(np.asarray(img, np.float32), axis, 0)
    if mode == "nearest":
        idx = np.clip(np.floor(coords + 0.5).astype(int), 0, in_size - 1)
        out = img[idx]
    elif mode == "bilinear":
        i0 = np.floor(coords).astype(int)
        frac = (coords - i0).astype(np.float32)
        i0c = np.clip(i0, 0, in_size - 1)
        i1c = np.clip(i0 + 1, 0, in_size - 1)
        out = img[i0c] * (1 - frac)[:, None] + img[i1c] * frac[:, None]
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return np.moveaxis(out, 0, axis)


def resize_batch(images, out_resolution, mode="bilinear"):
    """Resize a (N,1,R,R) batch to (N,1,out,out)."""
    return np.stack(
        [
            center_crop_resize(im[0], 1.0, out_resolution, mode)[None]
            for im in images
        ]
    ).astype(np.float32)
