import time
import numpy as np
from fasim.simulate import DgpConfig, NoiseSpec, OutlierSpec, run_size_power, generate
from fasim.core_data import SeedSpec, Dataset
from fasim.forecast import ForecastConfig, moving_window_forecast, least_squares_forecast, oracle_linear_forecast
from fasim.simulate import inject_outliers

out = OutlierSpec(0.1, 10.0)
grid = [0.0, 0.15, 0.3, 0.45, 0.6, 0.75]
cells = [
    ("lin gauss clean", DgpConfig(model="linear", n=200, p=200, u_dist="toeplitz",
                                  noise=NoiseSpec("gaussian", 0.25), seed=SeedSpec(31))),
    ("lin t3 clean", DgpConfig(model="linear", n=200, p=200, u_dist="toeplitz",
                               noise=NoiseSpec("student_t", 3), seed=SeedSpec(32))),
    ("lin gauss outl", DgpConfig(model="linear", n=200, p=200, u_dist="toeplitz",
                                 noise=NoiseSpec("gaussian", 0.25), outliers=out, seed=SeedSpec(33))),
    ("nonlin t3 outl", DgpConfig(model="nonlinear", n=200, p=200, u_dist="toeplitz",
                                 noise=NoiseSpec("student_t", 3), outliers=out, seed=SeedSpec(34))),
]
for name, cfg in cells:
    t0 = time.time()
    rep = run_size_power(grid, cfg, R=60, alpha=0.05, B=300, threads=2)
    rates = [round(r.value, 3) for r in rep.rows]
    print(f"{name}: {rates} ({time.time()-t0:.0f}s)", flush=True)

# forecast probe
for pollute in (False, True):
    cfg = DgpConfig(model="linear", n=200, p=60, s=3, omega=0.5, u_dist="iid_normal",
                    noise=NoiseSpec("gaussian", 0.25), seed=SeedSpec(60))
    panel, truth = generate(cfg)
    Y = panel.Y
    if pollute:
        Yp = inject_outliers(Y, 0.1, 10.0, SeedSpec(61))
        panel_train = Dataset(X=panel.X, Y=Yp)
    else:
        panel_train = panel
    t0 = time.time()
    fr = moving_window_forecast(panel_train, window=90,
                                config=ForecastConfig(K=2, n_knots=6, seed=SeedSpec(62)))
    # evaluate against clean targets
    mse_f = float(np.mean((Y[90:] - fr.predictions[:, 2]) ** 2))
    ls = least_squares_forecast(panel_train, window=90)
    mse_ls = float(np.mean((Y[90:] - ls.predictions[:, 2]) ** 2))
    orc = oracle_linear_forecast(Y, truth, window=90)
    print(f"pollute={pollute}: FASIM={mse_f:.4f} LS={mse_ls:.4f} oracle={orc.mse:.4f} ({time.time()-t0:.0f}s)", flush=True)
