"""Scratch calibration for the planted-community experiment (not shipped)."""
import time
import numpy as np
from disrec.synthetic import planted_communities
from disrec.data import Dataset
from disrec.config import Config
from disrec import training
from disrec.evaluation import evaluate_params


def run(seed, lam1, lam2, lr, epochs, dim, mean_inter, social_deg, patience, projector=True):
    data = planted_communities(seed=seed, mean_interactions=mean_inter, social_degree=social_deg)
    dataset = Dataset.from_pairs(data.interactions, data.social, 1000, 800, seed=seed)
    cfg = Config(dim=dim, epochs=epochs, batch_size=16384, learning_rate=lr,
                 patience=patience, lambda1=lam1, lambda2=lam2, tau=0.2, seed=seed,
                 projector=projector)
    t0 = time.perf_counter()
    result = training.fit(dataset, cfg)
    dt = time.perf_counter() - t0
    rep = evaluate_params(dataset, result.params, cfg, fold="test")
    return rep.recall, rep.ndcg, dt, result.epochs_run, result.log.best_epoch


for lr in (0.003, 0.01):
    for mean_inter in (8, 12):
        print(f"=== lr={lr} mean_inter={mean_inter} dim=32 epochs=60 ===", flush=True)
        for seed in range(3):
            r_full = run(seed, 0.01, 0.001, lr, 60, 32, mean_inter, 8, 15)
            r_bpr = run(seed, 0.0, 0.0, lr, 60, 32, mean_inter, 8, 15)
            print(f" seed {seed}: full recall={r_full[0]:.4f} ndcg={r_full[1]:.4f} "
                  f"({r_full[2]:.0f}s, ran {r_full[3]} best {r_full[4]}) | "
                  f"bpr recall={r_bpr[0]:.4f} ndcg={r_bpr[1]:.4f} "
                  f"({r_bpr[2]:.0f}s, ran {r_bpr[3]} best {r_bpr[4]})", flush=True)
