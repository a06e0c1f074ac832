# scratch calibration: ViT-B overfit feasibility on this box (not part of the package)
import sys, time, resource
import numpy as np
from clip2mesh.spatial import SpatialTransformer, SpatialTransformerConfig, train_spatial

def smooth_field(rng, h, w, ch, freq=4):
    ys, xs = np.mgrid[0:h, 0:w] / h * 2 * np.pi
    out = np.zeros((h, w, ch))
    for c in range(ch):
        for _ in range(freq):
            fy, fx = rng.integers(1, 5, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            out[..., c] += rng.normal() * np.sin(fy * ys + ph[0]) * np.cos(fx * xs + ph[1])
    return out / np.abs(out).max()

def make_pairs(n, h=128, w=128, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    ys, xs = np.mgrid[0:h, 0:w]
    for i in range(n):
        cy, cx = rng.uniform(0.3, 0.7, 2) * h
        r = rng.uniform(0.25, 0.4) * h
        mask = ((ys - cy) ** 2 + (xs - cx) ** 2) < r * r
        nrm = smooth_field(rng, h, w, 3)
        nrm /= np.maximum(np.linalg.norm(nrm, axis=-1, keepdims=True), 1e-9)
        nrm *= mask[..., None]
        # shading-like input: 3 fixed light dirs + per-channel weights + clamp
        L = np.array([[0.5, 0.5, 0.7], [-0.6, 0.2, 0.77], [0.1, -0.7, 0.7]])
        shade = np.clip(nrm @ L.T, 0, None)
        img = (0.15 + 0.85 * shade) * mask[..., None]
        pairs.append((img, nrm, mask.astype(np.float64)))
    return pairs

mode = sys.argv[1] if len(sys.argv) > 1 else "speed"
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-4
batch = int(sys.argv[3]) if len(sys.argv) > 3 else 2
steps = int(sys.argv[4]) if len(sys.argv) > 4 else 400

cfg = SpatialTransformerConfig.variant("ViT-B", image_size=(128, 128), patch=16)
model = SpatialTransformer(cfg, seed=0)
print("params:", model.num_parameters() / 1e6, "M", flush=True)
pairs = make_pairs(8)

t0 = time.perf_counter()
hist = train_spatial(pairs, model, seed=1, steps=steps, lr=lr, batch_size=batch,
                     lambda_perc=0.1, eval_every=25, target_mse=1e-3,
                     log_fn=lambda s, m: print(f"step {s} mse {m:.5g} t {time.perf_counter()-t0:.0f}s rss {resource.getrusage(resource.RUSAGE_SELF).ru_maxrss/1e6:.2f}GB", flush=True))
print("done", hist[-1], time.perf_counter() - t0, "s")
