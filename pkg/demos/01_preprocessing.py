# %% [markdown]
# # Offline preprocessing, step by step
#
# A synthetic frame stands in for a hand radiograph: a bright textured
# blob on a dark background, a tilted carrier plate and a few bright
# marks around it.  We run each preprocessing variant and look at what
# reaches the model.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from xrayad.preprocess import eval_pipeline, offline_process, with_offline
from xrayad.core import ImageRecord
from xrayad.synthetic import make_fixture

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)
rng = np.random.default_rng(3)

# %% [markdown]
# One anomalous, cluttered frame.  The anomaly is a saturated 6x6 square
# somewhere inside the blob.

# %%
fixture = make_fixture(rng, anomalous=True, clutter=True, size=96)
print("frame", fixture.pixels.shape, "anomaly pixels", int(fixture.anomaly.sum()))

# %% [markdown]
# `offline_process` returns one result per detected hand.  The provenance
# list records every geometric step, which is how we can later map the
# square into the model frame.

# %%
results = {v: offline_process(fixture.pixels, v)[0] for v in ("raw", "crop", "full")}
for variant, res in results.items():
    steps = [p["step"] for p in res.provenance if not p.get("skipped")]
    print(f"{variant:5s} -> {res.pixels.shape}, steps: {', '.join(steps)}")

# %% [markdown]
# The online stage pads to a square and resizes to the training resolution.
# Without augmentation this is exactly what validation and test see.

# %%
record = ImageRecord("demo", "study1", "positive", pixels=fixture.pixels, image_id="demo")
fig, axes = plt.subplots(2, 4, figsize=(12, 6))
axes[0, 0].imshow(fixture.pixels, cmap="gray", vmin=0, vmax=1)
axes[0, 0].set_title("input")
axes[1, 0].imshow(fixture.anomaly, cmap="gray")
axes[1, 0].set_title("injected square")
for col, (variant, res) in enumerate(results.items(), start=1):
    model_input = eval_pipeline(with_offline(record, res), (64, 64), equalize=False)
    axes[0, col].imshow(model_input.pixels, cmap="gray", vmin=0, vmax=1)
    axes[0, col].set_title(f"{variant}: model input")
    axes[1, col].imshow(model_input.mask, cmap="gray")
    axes[1, col].set_title(f"{variant}: loss mask")
for ax in axes.flat:
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "preprocessing_variants.png", dpi=100)
print("wrote", OUT / "preprocessing_variants.png")

# %% [markdown]
# Note how the "raw" variant keeps the marks: after per-image intensity
# normalisation they compete with the anomaly for the top of the range.
# The "full" variant crops to the carrier, keeps only the hand and zeroes
# everything else.
