import time, math
import numpy as np
from fasim.simulate import DgpConfig, NoiseSpec, run_coverage, beta_h_oracle
from fasim.core_data import SeedSpec

R = 24
oracles = {}
def get_oracle(p, noise):
    key = (p, noise.label())
    if key not in oracles:
        cfg = DgpConfig(model="linear", n=200, p=p, u_dist="iid_normal",
                        noise=noise, seed=SeedSpec(2024))
        oracles[key] = beta_h_oracle(cfg, N_mc=400_000)
    return oracles[key]

def run(p, noise, c, lam_scale):
    cfg = DgpConfig(model="linear", n=200, p=p, u_dist="iid_normal",
                    noise=noise, seed=SeedSpec(2024))
    delta = c * math.sqrt(math.log(p) / 200)
    t0 = time.time()
    rep = run_coverage(cfg, R=R, delta=delta, lam_scale=lam_scale,
                       oracle=get_oracle(p, noise), threads=2)
    print(f"p={p} noise={noise.label()} c={c} lam_scale={lam_scale}: "
          f"CP={rep.value('CP'):.3f} AL={rep.value('AL'):.4f} "
          f"CP_S={rep.value('CP_S'):.3f} ({time.time()-t0:.0f}s)", flush=True)

g = NoiseSpec("gaussian", 0.25); t3 = NoiseSpec("student_t", 3)
# small-delta dense regime at p=200
for c in (0.5, 0.62):
    run(200, g, c, 1.0); run(200, t3, c, 1.0)
# lambda inflation at moderate delta
for ls in (1.5, 2.0):
    run(200, g, 0.8, ls); run(200, t3, 0.8, ls)
# p=500 feasibility boundary check
run(500, g, 0.85, 1.0); run(500, t3, 0.85, 1.0)
