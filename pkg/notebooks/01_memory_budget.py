# %% [markdown]
# Memory and operation budgets of the denoising CNNs at 96 x 96 snapshots.
# Run with `python3 notebooks/01_memory_budget.py`; cells split on `# %%`.

# %%
from qrim.cli import parse_model_spec
from qrim.resources import pareto_scan, report, reports_markdown

# %% real-valued grid: weights, feature maps, totals in MB
grid = ["L3-C8-B", "L3-C8-A", "L3-C16-B", "L3-C16-A", "L7-C32-B", "L7-C32-A", "L7-C256-B", "L7-C256-A",
        "L3-C1024-B", "L5-C1024-B", "L7-C1024-B", "L3-C1024-A", "L5-C1024-A", "L7-C1024-A"]
print(reports_markdown([report(parse_model_spec(s)) for s in grid]))

# %% quantized variants: binary weights (B) and sign activations (S)
quant = ["L3-C8-B", "L7-C32-A:B", "L7-C256-B:B", "L7-C256-A:S"]
print(reports_markdown([report(parse_model_spec(s)) for s in quant]))

# %% bit-width sweep of L3-C16-B in kB; 8 bit keeps about a quarter of the 32-bit memory
sweep = {b: report(parse_model_spec(f"L3-C16-B:{b}")) for b in (1, 2, 4, 6, 8, 32)}
for b, r in sweep.items():
    print(f"{b:2d} bit  weights {r.weight_bytes / 1024:7.3f} kB  total {r.total_kb:8.2f} kB")
print(f"8-bit / 32-bit memory: {sweep[8].total_bytes / sweep[32].total_bytes:.3f}")

# %% honest accounting adds one 32-bit dynamic range per quantized tensor
r = report(parse_model_spec("L3-C16-B:8"), honest=True)
print(f"dynamic ranges: {r.dynamic_range_bytes:.0f} B of {r.total_bytes:.0f} B")

# %% Pareto front over (total memory, F1) pairs, F1 taken from a results table
f1 = {"L3-C8-B": 0.8884, "L3-C16-A": 0.9000, "L7-C256-B:B": 0.8665, "L7-C256-A:S": 0.8598}
memory = {k: report(parse_model_spec(k)).total_kb for k in f1}
print(pareto_scan(list(f1), f1, memory))
