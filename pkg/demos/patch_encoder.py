"""
Patch encoding of sensor streams
================================

Series are z-scored, cut into width-8 patches, joined with a learned position
code and projected by an MLP into the language model's embedding space. The
normalization statistics travel alongside as plain text.
"""
import numpy as np

from lens_forge.encoder import (
    EncoderConfig, MlpWeights, PatchEncoder, denormalize, format_metadata, mlp_backward, mlp_forward,
    normalize, patchify,
)

rng = np.random.default_rng(0)
t = np.arange(1440)
hr = 72 + 8 * np.sin(2 * np.pi * t / 360) + rng.normal(0, 1.5, t.size)

z, stats = normalize(hr)
print(format_metadata(stats, "heart_rate"))
print("round-trip max error:", np.abs(denormalize(z, stats) - hr).max())

cfg = EncoderConfig(hidden=64, d=32)
ps = patchify(z, cfg)
print(f"\n{len(hr)} samples -> {ps.count} patches of dimension {ps.patches.shape[1]}")

# a short series is zero-padded to a whole patch
print("13 samples ->", patchify(np.arange(13.0), cfg).count, "patches")

# projection and its gradient
w = MlpWeights.init(cfg.layer_dims, seed=0)
out = mlp_forward(ps.patches, w)
print("\nembeddings:", out.shape, "layer dims", w.dims)
gw, gb, gu = mlp_backward(ps.patches, w, np.ones_like(out))
print("grad norms per layer:", [round(float(np.linalg.norm(g)), 3) for g in gw])

# a full window through the encoder
streams = {
    "heart_rate": hr,
    "zcr": rng.random(480),
    "steps": rng.poisson(3, 240).astype(float),
    "stress": rng.uniform(0, 100, 240),
    "gps_lon": np.full(24, -71.06),
    "gps_lat": np.full(24, 42.36),
    "phone_lock": (rng.random(240) > 0.7).astype(float),
}
enc = PatchEncoder(cfg, w)
res = enc.encode_window(streams, "Please summarize the user's overall mental and physical state in the past 4 hours.")
print(f"\nprefill: {res['budget'].text_tokens} text + {res['budget'].patch_tokens} patch tokens")
for name, emb in res["embeddings"].items():
    print(f"  {name:<11} {emb.shape}")
