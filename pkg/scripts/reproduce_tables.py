"""Print the token-count and FLOPs arithmetic tables.

    python3 scripts/reproduce_tables.py
"""

from tokencompact.hte import QWEN3_06B_LIKE, HteConfig, LlmShape
from tokencompact.metrics import flops_estimate, token_schedule
from tokencompact.mke import MkeConfig, floor_count, mke_token_count

MERGE_PAIRS = [(0.0, 0.0), (0.3, 0.2), (0.3, 0.4), (0.5, 0.4), (0.8, 0.4), (0.8, 0.6)]
DROP_RATES = [0.0, 0.05, 0.1, 0.15, 0.2]


def merge_table(n_base=576):
    print(f"merge ratios ({n_base} tokens per branch)")
    print(f"{'k_self':>7} {'k_cross':>8} {'tokens':>7} {'pct':>7}")
    print(f"{'bypass':>16} {mke_token_count(n_base, MkeConfig(bypass=True)):>7} {200.0:>7.2f}")
    for ks, kc in MERGE_PAIRS:
        n = mke_token_count(n_base, MkeConfig(k_self=ks, k_cross=kc))
        print(f"{ks:>7.1f} {kc:>8.1f} {n:>7} {100 * n / n_base:>7.2f}")


def drop_table(n_base=2880, start_pct=0.32):
    start = floor_count(start_pct, n_base)
    print(f"\ndrop rates (second half of 28 layers, start {start}/{n_base})")
    print(f"{'d':>5} {'final':>6} {'pct':>6} {'geometric':>10}")
    for d in DROP_RATES:
        sched = token_schedule(MkeConfig(), HteConfig(drop_rate=d), LlmShape(), n_base, start_count=start)
        geo = 100 * start_pct * (1 - d) ** 14
        print(f"{d:>5.2f} {sched.final_count:>6} {100 * sched.final_ratio:>6.2f} {geo:>10.2f}")


def flops_table(n_base=2880, n_text=100):
    shape = QWEN3_06B_LIKE
    vanilla = flops_estimate(shape, [n_base] * shape.n_layers, n_text, experts=False).total_g
    print(f"\nFLOPs, reference shape, {n_base} visual + {n_text} text tokens")
    print(f"{'setting':<28} {'GFLOPs':>9} {'/vanilla':>9}")
    print(f"{'vanilla':<28} {vanilla:>9.1f} {1.0:>9.4f}")
    for d in DROP_RATES:
        sched = token_schedule(MkeConfig(), HteConfig(drop_rate=d), shape, n_base)
        full = flops_estimate(shape, sched.visual_counts, n_text).total_g
        dense = flops_estimate(shape, sched.visual_counts, n_text, experts=False).total_g
        print(f"{f'merge + d={d:.2f}':<28} {full:>9.1f} {full / vanilla:>9.4f}")
        print(f"{f'  experts not costed':<28} {dense:>9.1f} {dense / vanilla:>9.4f}")


if __name__ == "__main__":
    merge_table()
    drop_table()
    flops_table()
