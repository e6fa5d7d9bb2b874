"""Direct transcription of the simulation-study equations, written
independently of the package's expression engine.  Used only as a test
oracle for the counterfactual mean of HAZ under a rule."""
import numpy as np


def _tn(rng, mu, sd, a, b, rep):
    z = rng.normal(mu, sd)
    u = rng.uniform(size=np.shape(z))
    a1, a2, b1, b2 = rep
    z = np.where(z < a, a1 + u * (a2 - a1), z)
    return np.where(z > b, b1 + u * (b2 - b1), z)


def counterfactual_haz(n, rule, t_end, seed, ztail=(-10, -3, 3, 10)):
    """Mean of Y_t_end with censoring removed and treatment set by rule."""
    rng = np.random.default_rng(seed)
    cd4_tail, pct_tail = (0, 50, 5000, 10000), (0.03, 0.09, 0.7, 0.8)
    region = rng.uniform(size=n) < 4392 / 5826
    _sex = rng.uniform(size=n) < np.where(region, 2222 / 4392, 758 / 1434)
    age = rng.uniform(1, 5, n)
    cd4 = _tn(rng, np.where(region, 650, 720), np.where(region, 350, 400), 0, 10000, cd4_tail)
    cd4_std = (cd4 - 671.7468) / (10 * 352.2788) + 1
    pct = _tn(rng, 0.16 + 0.05 * (cd4 - 650) / 650, 0.07, 0.06, 0.8, pct_tail)
    pct_std = (pct - 0.1648594) / (10 * 0.06980332) + 1
    waz = _tn(rng, np.where(region, -1.65, -2.05) + 0.1 * age + 0.05 * (cd4 - 650) / 650
              + 0.05 * (pct - 16) / 16, 1, -5, 5, ztail)
    haz = _tn(rng, -2.6 + 0.1 * (age > 2) + 0.3 * (~region) + (waz + 1.45), 1.1, -5, 5, ztail)
    waz0 = waz.copy()
    art = np.zeros(n)
    for t in range(1, t_end + 1):
        slope = 13 if t <= 4 else (4 if t <= 8 else 0)
        cd4_n = _tn(rng, slope * np.log(t * (1034 - 662) / 8) + cd4 + 2 * pct + 2 * waz + 2.5 * art,
                    50, 0, 10000, cd4_tail)
        pct_n = _tn(rng, pct + 0.0003 * (cd4_n - cd4) + 0.0005 * waz + 0.0005 * art * cd4_std,
                    0.02, 0.06, 0.8, pct_tail)
        waz_n = _tn(rng, waz + 0.0017 * (cd4_n - cd4) + 0.2 * (pct_n - pct) + 0.005 * art * pct_std,
                    0.5, -5, 5, ztail)
        if rule == "d1":
            art_n = np.ones(n)
        elif rule == "d4":
            art_n = np.zeros(n)
        else:
            cut_cd4, cut_pct = (750, 0.25) if rule == "d2" else (350, 0.15)
            art_n = ((cd4_n < cut_cd4) | (pct_n < cut_pct) | (waz_n < -2) | (art == 1)).astype(float)
        d1, d2, d3 = cd4_n - cd4, pct_n - pct, waz_n - waz
        mu = (haz + 0.00005 * d1 - 0.000001 * (d1 * np.sqrt(cd4_std)) ** 2
              + 0.01 * d2 - 0.0001 * (d2 * np.sqrt(pct_std)) ** 2
              + 0.07 * (d3 * (waz0 + 1.5135)) - 0.001 * (d3 * (waz0 + 1.5135)) ** 2
              + 0.005 * art_n + 0.075 * art + 0.05 * art_n * art)
        haz = _tn(rng, mu, 0.01, -5, 5, ztail)
        cd4, pct, waz, art = cd4_n, pct_n, waz_n, art_n
    return haz.mean(), haz.std(ddof=1) / np.sqrt(n)
