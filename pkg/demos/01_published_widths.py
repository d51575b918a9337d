"""Evaluate the entanglement witnesses on the published width table.

No fitting happens here: the twelve widths are fed straight into the
EPR-Reid products, the entanglement-of-formation bound and the dimension
bound. Run with ``python3 demos/01_published_widths.py``.
"""
from entcam.analysis import TABLE1_WIDTHS, table1_report

print("published widths (m and 1/m):")
for key, value in TABLE1_WIDTHS.items():
    print(f"  {key:8s} {value:.4g}")

rep = table1_report()
print()
print(f"EPR-Reid products: x {rep['product_x']:.4f}, y {rep['product_y']:.4f} (bound 0.5)")
print(f"EoF lower bounds:  E_x {rep['eof_x']:.3f}, E_y {rep['eof_y']:.3f} ebit")
print(f"dimension bounds:  d_x {rep['dim_x']:.2f}, d_y {rep['dim_y']:.2f}")
print(f"total dimension:   {rep['dim_total']:.2f} (sum), {rep['dim_total_floor']:.0f} (floored sum)")
