# %% [markdown]
# End to end: replay, augment, validate
# =====================================
#
# The same steps are available from the shell:
#
#     exogs replay   --manifest fixture/manifest.json --assets fixture/assets.json --out data/replay
#     exogs augment  --manifest fixture/manifest.json --assets fixture/assets.json \
#                    --plan fixture/plan_combined.json --seed 1234 --workers 4 --out data/aug
#     exogs validate --out data/aug --human

# %%
import json
import tempfile
from pathlib import Path

from exogs.cli import main
from exogs.synthetic import write_fixture

root = Path(tempfile.mkdtemp())
fx = write_fixture(root / "fixture", H=4, n_gaussians=800, width=96, height=64)
common = ["--manifest", str(fx["manifest"]), "--assets", str(fx["assets"])]

# %%
main(["replay", *common, "--out", str(root / "replay")])
main(["augment", *common, "--plan", str(fx["plan_combined"]), "--seed", "1234", "--out", str(root / "aug")])

# %%
rc = main(["validate", "--out", str(root / "aug")])
print("validate exit code:", rc)
manifest = json.loads((root / "aug" / "manifest.json").read_text())
print(len(manifest["episodes"]), "episodes in the manifest")
