"""Smoke test of the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/onarch-*.whl

then run ``python python/smoke_test.py``.
"""

import csv
import json
import math
import os
import tempfile

import onarch


def power_law(g, alpha, omega):
    return {"shape": "power_law_exp", "g": g, "alpha": alpha, "omega": omega}


def exponential(g, omega):
    return {"shape": "exponential", "g": g, "omega": omega}


def equation(s2, nu, g_dd, g_nn):
    return {
        "q": 10,
        "s2": s2,
        "nu": nu,
        "K_DD": power_law(g_dd, 0.8, 0.05),
        "K_NN": power_law(g_nn, 1.0, 0.05),
        "K_ND": power_law(0.01, 1.0, 0.05),
        "K_DN": power_law(0.01, 1.0, 0.05),
        "L_D": exponential(-0.04, 0.2),
        "L_N": exponential(-0.02, 0.2),
    }


def small_model():
    return json.dumps(
        {
            "q": 10,
            "day": equation(0.45, 8.0, 0.12, 0.06),
            "night": equation(0.4, 5.0, 0.08, 0.1),
            "cross_moment": 0.0,
            "variance_shares": [0.5, 0.5],
        }
    )


def write_panel(panel, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["ticker", "date", "r_intraday", "r_overnight", "r_daily"])
        for s, ticker in enumerate(panel["tickers"]):
            for t, date in enumerate(panel["dates"]):
                w.writerow(
                    [ticker, date, repr(panel["intraday"][s][t]), repr(panel["overnight"][s][t]), repr(panel["daily"][s][t])]
                )


def main():
    stability = json.loads(onarch.check_stability(onarch.reference_model()))
    l1, l2 = stability["eigenvalues"]
    assert abs(l1 - 0.94) <= 0.02 and abs(l2 - 0.48) <= 0.02, stability
    print(f"reference eigenvalues {l1:.4f} {l2:.4f}")

    model = small_model()
    panel = onarch.simulate(model, stocks=4, days=400, seed=2, burn_in=200)
    again = onarch.simulate(model, stocks=4, days=400, seed=2, burn_in=200)
    assert panel == again
    assert len(panel["tickers"]) == 4 and len(panel["dates"]) == 400
    for d, n, r in zip(panel["intraday"][0], panel["overnight"][0], panel["daily"][0]):
        assert r == d + n

    day, night = onarch.filter_volatility(model, panel["intraday"][0], panel["overnight"][0])
    assert len(day) == len(night) == 390
    assert all(v > 0 and math.isfinite(v) for v in day + night)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "panel.csv")
        write_panel(panel, path)
        assert onarch.read_panel(path)["intraday"] == panel["intraday"]
        fit = onarch.calibrate(path, "day", q_free=5, q=10)
        parsed = json.loads(fit)
        print(f"day fit: nu {parsed['params']['params']['nu']:.3f}, converged {parsed['converged']}")
        w = json.loads(onarch.wald(fit, fit))
        assert w["xi_n"] == 0.0 and w["p_value"] == 1.0

    try:
        onarch.check_stability("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed model accepted")
    print("python bindings OK")


if __name__ == "__main__":
    main()
