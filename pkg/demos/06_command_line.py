"""
The full pipeline from a config file
====================================

Write inputs and a YAML config, then run every stage the way the
``fiscalstate`` command does.
"""

import json
import tempfile
from pathlib import Path

from fiscalstate.cli import main
from fiscalstate.simulate import synthetic_fiscal_data

root = Path(tempfile.mkdtemp())
ds, records, _ = synthetic_fiscal_data(T=240, seed=3, start="1890Q1")

with open(root / "macro.csv", "w") as fh:
    fh.write("quarter," + ",".join(ds.names) + "\n")
    for i, q in enumerate(ds.index):
        fh.write(f"{q}," + ",".join(repr(float(ds[n][i])) for n in ds.names) + "\n")
with open(root / "securities.csv", "w") as fh:
    fh.write("security_id,quarter,outstanding,coupon_rate\n")
    for r in records:
        fh.write(f"{r.security_id},{r.quarter},{r.outstanding!r},{r.coupon_rate!r}\n")

(root / "run.yaml").write_text("""\
data: {path: macro.csv, securities: securities.csv}
shock: {source: narrative_sign, draws: 500}
spec: {dependent: [output], horizon_max: 12}
""")

# dry run first: prints usable quarters per horizon
main(["validate", "--config", str(root / "run.yaml")])

rc = main(["run-all", "--config", str(root / "run.yaml"), "--seed", "7", "--out", str(root / "out")])
manifest = json.loads((root / "out" / "manifest.json").read_text())
print("exit code", rc)
print("acceptance:", manifest["acceptance"])
print((root / "out" / "irf_output_table.txt").read_text())
