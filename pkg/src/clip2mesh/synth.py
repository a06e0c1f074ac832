"""Deterministic synthetic scenes: randomized capsule-body subjects with
procedural clothing displacement, scripted motion, rendered channels, and
ground-truth labels. Every byte of output is a pure function of the spec.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .body import BodyParams, BodyBuild, a_pose, build_body
from .geometry import (Camera, InsideTester, TriMesh, load_obj, load_png,
                       load_sttf, render_channels, render_shaded, save_obj,
                       save_png, save_sttf)
from .maps import NormalMap

LIGHT_DIRS = np.array([[0.35, 0.25, 0.90], [-0.55, 0.10, 0.60], [0.20, -0.60, 0.45]])
LIGHT_COLORS = np.array([[0.85, 0.55, 0.30], [0.25, 0.50, 0.75], [0.35, 0.30, 0.20]])


@dataclass
class SceneSpec:
    """Everything that determines a synthetic sequence, seed included."""

    seed: int = 0
    frames: int = 7
    image_size: int = 128
    camera_scale: float = 56.0
    body_resolution: int = 64
    displacement_amp: float = 0.015
    motion_amplitude: float = 0.25
    n_occupancy: int = 8000
    near_fraction: float = 0.5
    near_sigma_cells: float = 2.0
    reference_grid: int = 96

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.image_size % 2:
            raise ValueError("image size must be even")

    def camera(self) -> Camera:
        c = self.image_size / 2.0
        return Camera(scale=self.camera_scale * self.image_size / 128.0,
                      cx=c, cy=c, height=self.image_size, width=self.image_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneSpec":
        return cls(**obj)


@dataclass
class FrameRecord:
    """One rendered frame and its ground truth."""

    index: int
    rgb: np.ndarray                 # (H,W,3) in [0,1]
    mask: np.ndarray                # (H,W) bool, rendered coverage
    normal_front: NormalMap
    normal_back: NormalMap
    mesh: TriMesh                   # clothed subject surface
    body_params: BodyParams
    joints: np.ndarray              # (24,3)
    occ_points: np.ndarray          # (N,3)
    occ_labels: np.ndarray          # (N,) bool

    def validate(self, cam: Camera, spot_check: int = 200) -> None:
        if not self.mask.any():
            raise ValueError("empty mask")
        self.normal_front.validate()
        self.normal_back.validate()
        dil = ndimage.binary_dilation(self.mask, iterations=2)
        uv, _ = cam.project(self.joints)
        ui = np.clip(np.round(uv[:, 0]).astype(int), 0, cam.width - 1)
        vi = np.clip(np.round(uv[:, 1]).astype(int), 0, cam.height - 1)
        if not np.all(dil[vi, ui]):
            raise ValueError("a joint projects outside the dilated mask")
        k = min(spot_check, len(self.occ_points))
        if k:
            idx = np.linspace(0, len(self.occ_points) - 1, k).astype(int)
            tester = InsideTester(self.mesh)
            if not np.array_equal(tester.contains(self.occ_points[idx]),
                                  self.occ_labels[idx]):
                raise ValueError("occupancy labels inconsistent with mesh parity")


def _displacement_field(rng: np.random.Generator, amp: float):
    """Smooth signed offset field (clothing proxy); evaluated on points
    relative to the body root so it travels with the subject."""
    waves = rng.uniform(4.0, 9.0, size=(3, 3)) * rng.choice([-1.0, 1.0], size=(3, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    weights = rng.uniform(0.5, 1.0, size=3)
    weights /= weights.sum()

    def field(points: np.ndarray) -> np.ndarray:
        acc = np.zeros(len(points))
        for k in range(3):
            acc += weights[k] * np.sin(points @ waves[k] + phases[k])
        return amp * acc

    return field


def displace_along_normals(mesh: TriMesh, offsets: np.ndarray) -> TriMesh:
    return TriMesh(mesh.vertices + offsets[:, None] * mesh.vertex_normals,
                   mesh.faces)


@dataclass
class _MotionScript:
    joints: np.ndarray       # (K,) joint indices
    axes: np.ndarray         # (K,3) unit rotation axes
    amplitudes: np.ndarray   # (K,)
    phases: np.ndarray       # (K,)
    rates: np.ndarray        # (K,) radians per frame
    sway: np.ndarray         # (3,) translation sway amplitudes

    def pose_delta(self, frame: int) -> np.ndarray:
        delta = np.zeros((24, 3))
        ang = self.amplitudes * np.sin(self.rates * frame + self.phases)
        for k, j in enumerate(self.joints):
            delta[j] += ang[k] * self.axes[k]
        return delta

    def translation_delta(self, frame: int) -> np.ndarray:
        return self.sway * np.sin(0.45 * frame + np.array([0.0, 1.7, 3.1]))


_MOVABLE = np.array([3, 6, 12, 16, 17, 18, 19, 1, 2, 4, 5])


def _sample_motion(rng: np.random.Generator, amplitude: float) -> _MotionScript:
    k = len(_MOVABLE)
    axes = rng.normal(size=(k, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return _MotionScript(
        joints=_MOVABLE.copy(),
        axes=axes,
        amplitudes=amplitude * rng.uniform(0.3, 1.0, k),
        phases=rng.uniform(0, 2 * np.pi, k),
        rates=rng.uniform(0.25, 0.8, k),
        sway=rng.uniform(0.0, 0.04, 3),
    )


def _sample_subject(rng: np.random.Generator):
    base = a_pose()
    base.shape = np.clip(rng.uniform(0.85, 1.2, 8), 0.5, 2.0)
    base.pose[np.array([3, 6, 16, 17, 18, 19])] += rng.normal(0, 0.05, (6, 3))
    albedo = rng.uniform(0.35, 0.95, 3)
    return base, albedo


def sample_occupancy(mesh: TriMesh, spec: SceneSpec, rng: np.random.Generator):
    """Half near-surface (normal jitter), half uniform in the volume."""
    n_near = int(spec.n_occupancy * spec.near_fraction)
    n_unif = spec.n_occupancy - n_near
    sigma = spec.near_sigma_cells * 2.0 / spec.reference_grid
    surf = mesh.sample_surface(n_near, rng)
    near = np.clip(surf + rng.normal(0.0, sigma, surf.shape), -0.999, 0.999)
    unif = rng.uniform(-1.0, 1.0, (n_unif, 3))
    points = np.concatenate([near, unif], axis=0)
    labels = InsideTester(mesh).contains(points)
    return points, labels


def generate_sequence(spec: SceneSpec) -> list[FrameRecord]:
    """Deterministically synthesize all frames of one sequence."""
    root = np.random.SeedSequence(spec.seed)
    subj_rng, motion_rng, cloth_rng, occ_root = (
        np.random.default_rng(s) for s in root.spawn(4))
    base, albedo = _sample_subject(subj_rng)
    motion = _sample_motion(motion_rng, spec.motion_amplitude)
    cloth = _displacement_field(cloth_rng, spec.displacement_amp)
    cam = spec.camera()
    occ_seeds = occ_root.bit_generator.seed_seq.spawn(spec.frames)

    records = []
    for f in range(spec.frames):
        params = BodyParams(base.pose + motion.pose_delta(f), base.shape,
                            base.translation + motion.translation_delta(f))
        build = build_body(params, spec.body_resolution)
        rel = build.mesh.vertices - build.joints[0]
        subject = displace_along_normals(build.mesh, cloth(rel))
        rgb, _ = render_shaded(subject, cam, LIGHT_DIRS, LIGHT_COLORS, albedo)
        nf, mask, _ = render_channels(subject, cam)
        nb, _, _ = render_channels(subject, cam, back=True)
        occ_rng = np.random.default_rng(occ_seeds[f])
        points, labels = sample_occupancy(subject, spec, occ_rng)
        records.append(FrameRecord(
            index=f, rgb=rgb, mask=mask,
            normal_front=NormalMap(nf, mask), normal_back=NormalMap(nb, mask),
            mesh=subject, body_params=params, joints=build.joints,
            occ_points=points, occ_labels=labels))
    return records


# -- controlled degradations -------------------------------------------------


def degrade(record: FrameRecord, kind: str, params: dict, seed: int) -> FrameRecord:
    """Return a copy of the frame with a degraded RGB channel.

    Ground-truth channels are untouched; only the image the pipeline sees
    changes. `dark_patch` scales an n x n region by gamma; `motion_blur`
    convolves with a normalized line kernel (wrap boundary, so the image
    mean is preserved).
    """
    rng = np.random.default_rng(seed)
    rgb = record.rgb.copy()
    h, w = rgb.shape[:2]
    if kind == "dark_patch":
        n = int(params.get("size", h // 4))
        gamma = float(params.get("gamma", 0.35))
        if not (0.0 < gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        ys, xs = np.nonzero(record.mask)
        if len(ys):
            k = rng.integers(0, len(ys))
            cy, cx = int(ys[k]), int(xs[k])
        else:
            cy, cx = h // 2, w // 2
        y0 = int(np.clip(cy - n // 2, 0, h - n))
        x0 = int(np.clip(cx - n // 2, 0, w - n))
        rgb[y0:y0 + n, x0:x0 + n] *= gamma
    elif kind == "motion_blur":
        k = int(params.get("length", 9))
        angle = float(params.get("angle", rng.uniform(0, np.pi)))
        kernel = _line_kernel(k, angle)
        for c in range(3):
            rgb[..., c] = ndimage.convolve(rgb[..., c], kernel, mode="wrap")
    else:
        raise ValueError(f"unknown degradation {kind!r}")
    return FrameRecord(index=record.index, rgb=rgb, mask=record.mask,
                       normal_front=record.normal_front,
                       normal_back=record.normal_back, mesh=record.mesh,
                       body_params=record.body_params, joints=record.joints,
                       occ_points=record.occ_points, occ_labels=record.occ_labels)


def _line_kernel(length: int, angle: float) -> np.ndarray:
    k = np.zeros((length, length))
    c = (length - 1) / 2.0
    d = np.array([np.cos(angle), np.sin(angle)])
    for t in np.linspace(-c, c, 4 * length):
        y = int(round(c + t * d[1]))
        x = int(round(c + t * d[0]))
        k[y, x] = 1.0
    return k / k.sum()


# -- dataset I/O ------------------------------------------------------------
#
# Layout: <out>/seq_XXX/ holds numbered PNG (rgb, mask), STTF (normal maps),
# OBJ (subject mesh), NPZ (occupancy), JSON (frame record) files plus
# frames.txt (ordered frame index) and manifest.json (spec + sha256 hashes).


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def save_sequence(out_dir, records: list[FrameRecord], spec: SceneSpec) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for rec in records:
        i = rec.index
        save_png(out / f"rgb_{i:03d}.png", rec.rgb)
        save_png(out / f"mask_{i:03d}.png", rec.mask.astype(np.float64))
        save_sttf(out / f"normal_front_{i:03d}.sttf", rec.normal_front.values)
        save_sttf(out / f"normal_back_{i:03d}.sttf", rec.normal_back.values)
        save_obj(out / f"mesh_{i:03d}.obj", rec.mesh)
        np.savez(out / f"occupancy_{i:03d}.npz", points=rec.occ_points,
                 labels=rec.occ_labels.astype(np.uint8))
        (out / f"frame_{i:03d}.json").write_text(json.dumps({
            "index": i,
            "body_params": json.loads(rec.body_params.to_json()),
            "joints": rec.joints.tolist(),
        }, indent=1))
        names += [f"rgb_{i:03d}.png", f"mask_{i:03d}.png",
                  f"normal_front_{i:03d}.sttf", f"normal_back_{i:03d}.sttf",
                  f"mesh_{i:03d}.obj", f"occupancy_{i:03d}.npz",
                  f"frame_{i:03d}.json"]
    (out / "frames.txt").write_text(
        "".join(f"frame_{r.index:03d}.json\n" for r in records))
    names.append("frames.txt")
    manifest = {
        "format": "clip2mesh-sequence-v1",
        "spec": spec.to_dict(),
        "files": {n: _sha256(out / n) for n in sorted(names)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_sequence(seq_dir) -> tuple[list[FrameRecord], SceneSpec]:
    seq = Path(seq_dir)
    manifest = json.loads((seq / "manifest.json").read_text())
    spec = SceneSpec.from_dict(manifest["spec"])
    order = [ln.strip() for ln in (seq / "frames.txt").read_text().splitlines() if ln.strip()]
    records = []
    for name in order:
        meta = json.loads((seq / name).read_text())
        i = meta["index"]
        mask = load_png(seq / f"mask_{i:03d}.png") > 0.5
        bp = meta["body_params"]
        params = BodyParams(np.array(bp["pose_axis_angle_radians"]),
                            np.array(bp["shape_scales"]),
                            np.array(bp["translation"]))
        occ = np.load(seq / f"occupancy_{i:03d}.npz")
        records.append(FrameRecord(
            index=i,
            rgb=load_png(seq / f"rgb_{i:03d}.png"),
            mask=mask,
            normal_front=NormalMap(load_sttf(seq / f"normal_front_{i:03d}.sttf"), mask),
            normal_back=NormalMap(load_sttf(seq / f"normal_back_{i:03d}.sttf"), mask),
            mesh=load_obj(seq / f"mesh_{i:03d}.obj"),
            body_params=params,
            joints=np.array(meta["joints"]),
            occ_points=occ["points"],
            occ_labels=occ["labels"].astype(bool)))
    return records, spec


def generate_dataset(out_dir, n_sequences: int, base_seed: int = 0,
                     **spec_overrides) -> dict:
    """Write n sequences (seeds base_seed..base_seed+n-1) plus a top manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for k in range(n_sequences):
        spec = SceneSpec(seed=base_seed + k, **spec_overrides)
        records = generate_sequence(spec)
        name = f"seq_{k:03d}"
        manifest = save_sequence(out / name, records, spec)
        entries[name] = {"seed": spec.seed,
                         "hash": hashlib.sha256(json.dumps(
                             manifest["files"], sort_keys=True).encode()).hexdigest()}
    top = {"format": "clip2mesh-dataset-v1", "sequences": entries}
    (out / "manifest.json").write_text(json.dumps(top, indent=1, sort_keys=True))
    return top
