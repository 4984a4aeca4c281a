import time, math
from fasim.simulate import DgpConfig, NoiseSpec, run_coverage, beta_h_oracle
from fasim.core_data import SeedSpec

R = 16
oracles = {}
def get_oracle(p, noise):
    key = (p, noise.label())
    if key not in oracles:
        cfg = DgpConfig(model="linear", n=200, p=p, u_dist="iid_normal",
                        noise=noise, seed=SeedSpec(2024))
        oracles[key] = beta_h_oracle(cfg, N_mc=400_000)
    return oracles[key]

def run(p, noise, c):
    cfg = DgpConfig(model="linear", n=200, p=p, u_dist="iid_normal",
                    noise=noise, seed=SeedSpec(2024))
    delta = c * math.sqrt(math.log(p) / 200)
    t0 = time.time()
    rep = run_coverage(cfg, R=R, delta=delta, oracle=get_oracle(p, noise), threads=2)
    print(f"p={p} noise={noise.label()} c={c}: CP={rep.value('CP'):.3f} AL={rep.value('AL'):.4f} "
          f"CP_S={rep.value('CP_S'):.3f} ({time.time()-t0:.0f}s)", flush=True)

g = NoiseSpec("gaussian", 0.25); t3 = NoiseSpec("student_t", 3)
for noise in (g, t3):
    run(500, noise, 0.62)
for noise in (g, t3):
    run(200, noise, 0.62)
for noise in (g, t3):
    run(500, noise, 0.75)
