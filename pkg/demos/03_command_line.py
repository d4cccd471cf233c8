# %% [markdown]
# # The command-line workflow
#
# Every pipeline stage is a subcommand.  Here we drive them from Python
# with `xrayad.cli.main`, which takes the same arguments as the `xrayad`
# executable and returns its exit status.

# %%
import shutil
from pathlib import Path

from xrayad.cli import RunConfig, main
from xrayad.synthetic import fixture_records, write_tree

WORK = Path(__file__).with_name("out") / "cli"
shutil.rmtree(WORK, ignore_errors=True)

# %% [markdown]
# A dataset tree in the expected layout,
# `<root>/<patient>/<study>_<positive|negative>/<image>.png`.

# %%
records, _ = fixture_records(40, 10, seed=1)
write_tree(WORK / "data", records)
print(sorted(p.relative_to(WORK) for p in (WORK / "data").glob("p000*/*/*.png")))

# %% [markdown]
# A run config holds what the flags do not.  Four seeds and two metrics;
# the training override keeps the demo short.

# %%
config = WORK / "run.yaml"
config.write_text(RunConfig(str(WORK / "data"), str(WORK / "out"), seeds=[42, 4242, 424242, 42424242],
                            metrics=["MSE", "MSE_topk"], train={"epochs": 10}).to_yaml())
print(config.read_text())

# %%
for command in ("preprocess", "split", "train", "score"):
    status = main([command, "--config", str(config)])
    assert status == 0, command

# %% [markdown]
# `evaluate` prints the report (mean ± std over seeds) and, with
# `--heatmap`, writes an overlay for the given image ids.

# %%
main(["evaluate", "--config", str(config), "--heatmap", "p0045_study1_image1"])
print(sorted(p.name for p in (WORK / "out").rglob("*overlay.png")))

# %% [markdown]
# Mistakes are reported with exit status 1, for example training without
# a split manifest.

# %%
(WORK / "out" / "split.tsv").unlink()
print("exit status:", main(["train", "--config", str(config), "--force"]))
