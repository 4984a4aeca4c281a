import sys, time, math
import numpy as np
from fasim.simulate import DgpConfig, NoiseSpec, run_coverage, beta_h_oracle
from fasim.core_data import SeedSpec

R = 24
results = []
for p in (200, 500):
    for noise in (NoiseSpec("gaussian", 0.25), NoiseSpec("student_t", 3)):
        cfg = DgpConfig(model="linear", n=200, p=p, u_dist="iid_normal",
                        noise=noise, seed=SeedSpec(2024))
        oracle = beta_h_oracle(cfg, N_mc=400_000)
        for c in (0.8, 1.0, 1.3):
            delta = c * math.sqrt(math.log(p) / 200)
            t0 = time.time()
            rep = run_coverage(cfg, R=R, delta=delta, oracle=oracle, threads=2)
            cp = rep.value("CP"); al = rep.value("AL")
            cps = rep.value("CP_S"); als = rep.value("AL_S")
            print(f"p={p} noise={noise.label()} c={c}: CP={cp:.3f} AL={al:.4f} "
                  f"CP_S={cps:.3f} AL_S={als:.4f} ({time.time()-t0:.0f}s)", flush=True)
