"""
Parameters and FLOPs
====================

The closed-form estimate covers one attention block plus the decoder. The
detailed counter walks every layer, padding included, at one
multiply-accumulate per unit.
"""

# %%
from ssformer.complexity import ComplexityInputs, analyze, omega_ssformer
from ssformer.config import profile

enc, dec, _ = profile("ade20k")
for size in (512, 1024):
    r = analyze(enc, dec, size, size, profile="ade20k")
    print(f"{size}x{size}: params {r.params_total / 1e6:.2f}M  "
          f"detailed {r.flops_detailed / 1e9:.2f}G  closed form {r.omega_eq1 / 1e9:.2f}G")

# %%
print("h=w=128, C=128, M=7, 150 classes:", omega_ssformer(ComplexityInputs(128, 128, 128, 7, 150)))

# %%
# Where the cost goes at 512x512.
report = analyze(enc, dec, 512, 512)
by_part = {}
for layer in report.per_layer:
    key = ".".join(layer.name.split(".")[:2])
    by_part[key] = by_part.get(key, 0) + layer.flops
for key, flops in sorted(by_part.items(), key=lambda kv: -kv[1])[:6]:
    print(f"{key:28s} {flops / 1e9:7.2f}G")
