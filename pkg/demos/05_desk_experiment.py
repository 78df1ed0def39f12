# %% [markdown]
# # A desk-sized end-to-end run
#
# The `desk-I` preset shrinks the fixed-two-source experiment to something a
# laptop finishes in a couple of minutes: 20k training instances, 5k test
# instances, three layers. Results land in a digest-named run directory.
#
# Set `JOINTAOA_DEMO_SMALL=1` for a 20-second version.

# %%
import json
import os
import tempfile

from jointaoa import pipeline
from jointaoa.config import preset

cfg = preset("desk-I", out=tempfile.mkdtemp(prefix="jointaoa-demo-"))
if os.environ.get("JOINTAOA_DEMO_SMALL"):
    cfg = cfg.replace(D_trn=4000, D_tst=1000, L=1)
run = pipeline.run_all(cfg)
print(run.dir)

# %%
print(run.path("report.txt").read_text())

# %% [markdown]
# The learned threshold and the per-stage provenance are plain JSON.

# %%
print(json.loads(run.path("threshold.json").read_text())["level"])
for stage, rec in run.manifest["stages"].items():
    print(f"{stage:>9}: reads {rec['inputs']}")
