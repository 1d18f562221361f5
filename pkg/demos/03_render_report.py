"""Render markdown tables and bar charts from a report JSON.

The input is what ``fairperturb evaluate`` writes to report.json; here it is
the fixture used by the tests, with four models on the difficult label set.

    python demos/03_render_report.py [out_dir]
"""

import json
import sys
import tempfile
from pathlib import Path

from fairperturb.report import render_report, write_figures

fixture = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "table5.json"
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="fairperturb-report-"))

report = json.loads(fixture.read_text())
print(render_report(report))
for path in write_figures(report, out):
    print(f"figure: {path}")
