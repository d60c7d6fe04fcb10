"""Compare per-layer information density of router-saliency pruning against random pruning.

    python3 scripts/density_trend.py --seeds 10 --eps 0.5
"""

import argparse

import numpy as np

from tokencompact.config import PipelineConfig
from tokencompact.features import synth_features
from tokencompact.hte import HteConfig, LlmShape, run_stack
from tokencompact.metrics import coding_rate, stable_rank
from tokencompact.mke import mke_forward


def profile(v, cfg, shape, score_fn, eps):
    res = run_stack(v, cfg.text_len, shape, HteConfig(drop_rate=cfg.hte.drop_rate, score_fn=score_fn), cfg.seed)
    rows = []
    for rec in res.records:
        states = res.layer_states[rec.layer_index]
        rows.append((rec.layer_index, len(states), coding_rate(states, eps) / len(states), stable_rank(states)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--eps", type=float, default=0.5)
    ap.add_argument("--rho", type=float, default=0.7)
    ap.add_argument("--drop-rate", type=float, default=0.1)
    args = ap.parse_args()

    shape = LlmShape()
    wins = 0
    for seed in range(args.seeds):
        cfg = PipelineConfig(seed=seed)
        cfg = cfg.with_value("drop_rate", args.drop_rate)
        main_f, extra_f = synth_features(seed, cfg.grid, cfg.features.dim, args.rho)
        v, _ = mke_forward(main_f, extra_f, cfg.mke, shape.hidden_dim, seed)
        hte = profile(v, cfg, shape, "max", args.eps)
        rnd = profile(v, cfg, shape, "random", args.eps)
        gap = np.mean([h[2] for h in hte]) - np.mean([r[2] for r in rnd])
        wins += gap >= 0
        print(f"seed {seed}: coding rate / token  router {np.mean([h[2] for h in hte]):.4f}  "
              f"random {np.mean([r[2] for r in rnd]):.4f}  gap {gap:+.4f}")
        if seed == 0:
            for (layer, n, cr_h, sr_h), (_, _, cr_r, sr_r) in zip(hte, rnd):
                print(f"    layer {layer:>2} n={n:>3}  cr/n {cr_h:.4f} vs {cr_r:.4f}  srank {sr_h:.2f} vs {sr_r:.2f}")
    print(f"router pruning at least as dense on {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
