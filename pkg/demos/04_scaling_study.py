"""Memory and per-epoch time versus stencil size: the graph network's edge
store grows as n^2 while the cloud operator's payload grows as n.

Run:  python3 demos/04_scaling_study.py   (a couple of minutes)
"""

from pathlib import Path

from cloudop.bench import run_scaling_study

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

report = run_scaling_study(
    n_values=[25, 50, 100],
    samples_per_n=8,
    repetitions=3,
)
for series, slope in sorted(report.fitted_slopes.items()):
    print(f"{series:>18}: slope {slope:.3f}")
report.to_csv(out / "scaling.csv")
print("wrote scaling.csv")
