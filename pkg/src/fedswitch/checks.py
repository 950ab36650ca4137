"""Acceptance checks.

Each check returns a :class:`CheckResult`; ``run_checks`` runs a selection.
The same functions back ``fedswitch check`` and the acceptance tests.
``quick=True`` shrinks every workload for a smoke run; runtime limits are
only enforced at full size.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import orchestrator as orc
from . import radio
from .bound import RateTermWarning, SmoothnessConstants
from .channel import (LinkParams, far_field_log_laplace, sample_interference, sample_model_field,
                      sinr_values, success_probability)
from .config import load_preset
from .lambertw import BRANCH_POINT, lambert_w
from .switching import SwitchState, primal_step

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:>2}. {self.title}: {self.detail} ({self.seconds:.1f}s)"


def _timed(limit):
    """Wrap a check body; ``limit`` (s) is enforced only at full size."""

    def deco(fn):
        def run(quick: bool = False) -> CheckResult:
            t0 = time.perf_counter()
            res = fn(quick)
            res.seconds = time.perf_counter() - t0
            if limit is not None and not quick and res.seconds >= limit:
                res.passed = False
                res.detail += f"; runtime {res.seconds:.1f}s exceeds {limit:g}s"
            return res

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return deco


# --- scenarios shared by the allocation checks ---------------------------------------------------

_W = 1e9
_N0 = 10 ** (-162 / 10) * 1e-3
_ALPHA = 3.8


def allocation_scenario(rng, K: int, N: int = 4, G_bits: float = 2.359296e6):
    """Random bandwidth-search instance: geometry, fading, field interference, powers, mixed subscriptions."""
    d = np.sqrt(10.0**2 + rng.random(K) * (250.0**2 - 10.0**2))
    h = np.empty(K)
    I = np.empty(K)
    for k in range(K):
        link = LinkParams(float(d[k]), _ALPHA, 10 ** -0.5, 1e-5, _W, _N0)
        hk, Ik = sample_interference(link, 1000.0, 1, rng, 0.2, 250.0)
        h[k], I[k] = hk[0], Ik[0]
    P = rng.uniform(1e-3, 0.2, K)
    beta = (rng.random((N, K)) < 0.5).astype(int)
    if not beta.any():
        beta[rng.integers(N), rng.integers(K)] = 1
    return beta, P, h * d**-_ALPHA, I, np.full(N, G_bits)


_E_MIN = 5e-3


def _fillable(beta, P, gain, I, G) -> bool:
    """True when the scheduled links need more than the whole band at ``E_min``."""
    sched = beta.astype(bool)
    S = (P * gain)[None, :].repeat(len(G), 0)[sched]
    Ik = I[None, :].repeat(len(G), 0)[sched]
    Gk = G[:, None].repeat(len(P), 1)[sched]
    raw, _ = radio.required_delta(_E_MIN, S, Ik, Gk, _W, _N0)
    return float(raw.sum()) > 1.0


def _scenarios(n, seed=2024):
    """``n`` valid instances cycling K over 1, 5, 20, and the number rejected.

    An instance is valid when a full allocation exists above the delay floor;
    otherwise the band cannot be filled by any target in ``[E_min, E_input]``.
    """
    rng = np.random.default_rng(seed)
    sizes = (1, 5, 20)
    out, rejected = [], 0
    while len(out) < n:
        sc = allocation_scenario(rng, sizes[len(out) % 3])
        if _fillable(*sc):
            out.append(sc)
        else:
            rejected += 1
    return out, rejected


@_timed(10.0)
def check_allocation(quick=False) -> CheckResult:
    """The bandwidth search fills the band to within omega or flags non-convergence."""
    omega, j_max = 1e-3, 60
    scen, rejected = _scenarios(12 if quick else 50)
    ok = 0
    bad = []
    for i, (beta, P, gain, I, G) in enumerate(scen):
        res = radio.allocate_bandwidth(beta, P, gain, I, G, _W, _N0, _E_MIN, omega, j_max)
        in_band = 1 - omega <= res.delta_sum <= 1
        if res.converged and in_band and res.iterations <= j_max:
            ok += 1
        elif res.converged or res.iterations > j_max or res.delta_sum > 1:
            bad.append(i)
    need = math.ceil(0.96 * len(scen))
    passed = ok >= need and not bad
    return CheckResult(1, "full bandwidth allocation", passed,
                       f"{ok}/{len(scen)} converged (need {need}), {len(bad)} malformed; "
                       f"{rejected} draws rejected with the delay floor binding")


@_timed(60.0)
def check_bound(quick=False) -> CheckResult:
    """Measured risk gap never exceeds the four-term bound."""
    cfg = load_preset("bound_dominance")
    seeds = (0, 1) if quick else (0, 1, 2, 3, 4)
    rounds = 40 if quick else 200
    violations = 0
    a_bad = 0
    worst = -math.inf
    for seed in seeds:
        for r in orc.run_experiment(cfg, rounds=rounds, seeds=[seed]):
            if r.phi_measured > r.bound_total:
                violations += 1
            a_bad += not all(0 < a <= 1 for a in r.A_n)
            worst = max(worst, r.phi_measured / r.bound_total)
    passed = violations == 0 and a_bad == 0
    return CheckResult(2, "risk-gap bound dominance", passed,
                       f"{violations} violations, {a_bad} rounds with A outside (0,1], "
                       f"max phi/bound {worst:.3g} over {len(seeds)} seeds x {rounds} rounds")


LAMBDA_GRID = (
    # theta, d (m), P (W), delta
    (10 ** -0.5, 100.0, 0.1, 0.05),
    (1.0, 200.0, 0.2, 0.2),
    (10 ** 0.5, 50.0, 0.01, 0.5),
    (10 ** 0.5, 250.0, 0.2, 0.01),
    (10 ** -1.0, 30.0, 0.001, 1.0),
    (10 ** -0.5, 150.0, 0.05, 0.002),
    (1.0, 80.0, 0.02, 0.1),
    (10 ** 0.5, 120.0, 0.15, 0.03),
    (10 ** -1.0, 240.0, 0.2, 0.3),
    (10 ** 0.25, 180.0, 0.005, 0.005),
)


def model_field_mc(link: LinkParams, P: float, delta: float, M: int, rng, near_count: float = 40.0,
                   chunk: int = 100_000) -> tuple[float, float]:
    """Monte-Carlo success probability on the model field, with its standard error.

    The near field (``near_count`` expected interferers) is simulated; the
    serving Rayleigh gain is integrated out per draw and the far field enters
    through its exact Laplace factor.
    """
    R1 = math.sqrt(near_count / (math.pi * link.phi_density))
    log_far = far_field_log_laplace(link, R1)
    total = 0.0
    total_sq = 0.0
    done = 0
    noise = link.W * delta * link.N0
    while done < M:
        m = min(chunk, M - done)
        _, I, link_eff, _ = sample_model_field(link, P, m, rng, radius=R1)
        x = np.exp(-link.theta * (noise + I) / (P * link_eff.path_gain()) + log_far)
        total += x.sum()
        total_sq += (x * x).sum()
        done += m
    mean = total / M
    var = max(total_sq / M - mean * mean, 0.0)
    return mean, math.sqrt(var / M)


def literal_model_gap(link: LinkParams, P: float, delta: float, M: int, rng) -> float:
    """Crude Monte-Carlo success rate on the literal disk model minus the closed form."""
    h, I = sample_interference(link, 1000.0, M, rng, 0.2, 250.0)
    s = sinr_values(h, I, P, delta, link)
    return float(np.mean(s >= link.theta)) - float(success_probability(P, delta, link))


@_timed(120.0)
def check_success_probability(quick=False) -> CheckResult:
    """Closed-form lambda within 3 sigma of Monte Carlo."""
    M = 20_000 if quick else 1_000_000
    rng = np.random.default_rng(314)
    worst = 0.0
    gaps = []
    for theta, d, P, delta in LAMBDA_GRID:
        link = LinkParams(d, _ALPHA, theta, 1e-5, _W, _N0)
        lam = float(success_probability(P, delta, link))
        mean, se = model_field_mc(link, P, delta, M, rng)
        worst = max(worst, abs(mean - lam) / se)
        gaps.append(literal_model_gap(link, P, delta, 20_000, rng))
    passed = worst <= 3.0
    return CheckResult(3, "success probability vs Monte Carlo", passed,
                       f"max |z| {worst:.2f} over {len(LAMBDA_GRID)} points (M={M}); "
                       f"literal disk model gap up to {max(map(abs, gaps)):.3f} (not gated)")


def _w_bisect(x: float) -> float:
    lo, hi = -1.0, max(1.0, math.log(x + 1.0) + 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) < x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@_timed(None)
def check_lambert(quick=False) -> CheckResult:
    """Principal-branch Lambert W residual and W(1) against bisection."""
    n = 2000 if quick else 10_000
    lo = BRANCH_POINT + 1e-6
    # half the points near the branch point and zero, half log-spaced up to 1e6
    lin = np.linspace(lo, 1.0, n // 2)
    logs = np.logspace(0, 6, n - n // 2)
    x = np.concatenate([lin, logs])
    x = x[x != 0]
    w = lambert_w(x)
    rel = np.max(np.abs(w * np.exp(w) - x) / np.abs(x))
    w1 = float(lambert_w(1.0))
    oracle = _w_bisect(1.0)
    passed = rel <= 1e-12 and abs(w1 - 0.5671432904) <= 1e-9 and abs(w1 - oracle) <= 1e-9
    return CheckResult(4, "Lambert W accuracy", passed,
                       f"max rel residual {rel:.2e} on {x.size} points; W(1)={w1:.12f}, bisection {oracle:.12f}")


def random_power_case(rng):
    """Random parameter set for the per-UE power objective."""
    N = int(rng.integers(1, 6))
    link = LinkParams(float(rng.uniform(10, 250)), float(rng.uniform(2.5, 4.5)), 10 ** rng.uniform(-1, 1),
                      1e-5, _W, _N0)
    eps = float(rng.uniform(0.5, 3.0))
    consts = SmoothnessConstants(eps, eps * float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.1, 10)),
                                 float(rng.uniform(0, 0.1)))
    beta = (rng.random(N) < 0.5).astype(float)
    delta = 10 ** rng.uniform(-3, 0, N)
    B_prev = rng.uniform(0, 5, N)
    mu = float(10 ** rng.uniform(-4, 1))
    E_t = float(10 ** rng.uniform(-3, -1))
    P = float(rng.uniform(1e-3, 0.2))
    return P, beta, delta, B_prev, consts, mu, E_t, link


@_timed(None)
def check_power_gradient(quick=False) -> CheckResult:
    """Analytic power gradient vs central differences of the noise-limited objective."""
    rng = np.random.default_rng(19)
    n = 100
    worst = 0.0
    for _ in range(n):
        P, beta, delta, B_prev, consts, mu, E_t, link = random_power_case(rng)
        g = radio.power_gradient(P, beta, delta, B_prev, consts, mu, E_t, link)
        h = 1e-3 * P

        def q(p):
            return radio.q_hat(p, beta, delta, B_prev, consts, mu, E_t, link, include_interference=False)

        # Richardson-extrapolated central difference
        d1 = (q(P + h) - q(P - h)) / (2 * h)
        d2 = (q(P + h / 2) - q(P - h / 2)) / h
        fd = (4 * d2 - d1) / 3
        scale = max(abs(g), abs(fd), 1e-300)
        worst = max(worst, abs(g - fd) / scale)
    return CheckResult(5, "power gradient vs finite differences", worst <= 1e-5,
                       f"max rel error {worst:.2e} on {n} parameter sets")


def enumerate_lp(coef, s_t: int) -> np.ndarray:
    """Exhaustive minimiser of ``coef . beta`` over binary ``beta`` with ``sum beta <= s_t``."""
    N = len(coef)
    best, best_val = np.zeros(N), 0.0
    for k in range(1, s_t + 1):
        for idx in itertools.combinations(range(N), k):
            val = float(np.sum(coef[list(idx)]))
            if val < best_val:
                best_val = val
                best = np.zeros(N)
                best[list(idx)] = 1.0
    return best


@_timed(None)
def check_primal_lp(quick=False) -> CheckResult:
    """Primal step equals exhaustive binary enumeration."""
    rng = np.random.default_rng(12)
    n = 200 if quick else 1000
    mismatches = 0
    for _ in range(n):
        N = int(rng.integers(1, 11))
        s_t = int(rng.integers(1, 4))
        s_t = min(s_t, N)
        state = SwitchState(np.zeros(N), rng.uniform(0, 1.0 / N, N) * min(1.0, s_t), s_t, 0.1)
        grad = rng.normal(size=N)
        dual = np.maximum(0.0, rng.normal(size=N))
        got = primal_step(state, grad, dual)
        want = enumerate_lp(grad - dual, s_t)
        mismatches += not np.array_equal(got, want)
    return CheckResult(6, "primal step LP exactness", mismatches == 0, f"{mismatches} mismatches on {n} instances")


@_timed(300.0)
def check_strategy_order(quick=False) -> CheckResult:
    """Final measured risk: proposed <= greedy <= one-shot."""
    cfg = load_preset("switching_strategies")
    seeds = (0, 1) if quick else (0, 1, 2, 3, 4)
    rounds = 40 if quick else cfg.rounds
    final = {}
    for strategy in ("proposed", "greedy", "one-shot"):
        for seed in seeds:
            rows = orc.run_experiment(cfg, strategy, rounds=rounds, seeds=[seed])
            final[strategy, seed] = rows[-1].risk_ensemble
    pg = sum(final["proposed", s] <= final["greedy", s] for s in seeds)
    go = sum(final["greedy", s] <= final["one-shot", s] for s in seeds)
    need = len(seeds) - 1 if len(seeds) > 2 else len(seeds)
    means = {st: np.mean([final[st, s] for s in seeds]) for st in ("proposed", "greedy", "one-shot")}
    passed = pg >= need and go >= need and means["proposed"] <= means["greedy"] <= means["one-shot"]
    return CheckResult(7, "switching strategy ordering", passed,
                       f"mean final risk proposed {means['proposed']:.4f}, greedy {means['greedy']:.4f}, "
                       f"one-shot {means['one-shot']:.4f}; proposed<=greedy in {pg}/{len(seeds)}, "
                       f"greedy<=one-shot in {go}/{len(seeds)}")


def power_energy_gap(theta_db: float, seeds, rounds: int):
    """Per-seed total communication energy of optimised power and of max power."""
    out = []
    for seed in seeds:
        pair = []
        for strategy in ("proposed", "max-power"):
            cfg = load_preset("power_control_energy", theta_db=theta_db)
            rows = orc.run_experiment(cfg, strategy, rounds=rounds, seeds=[seed])
            pair.append(sum(r.energy_comm_J for r in rows))
        out.append(tuple(pair))
    return out


@_timed(None)
def check_power_energy(quick=False) -> CheckResult:
    """Optimised power spends less communication energy; the gap narrows at a higher threshold."""
    cfg = load_preset("power_control_energy")
    seeds = (0, 1) if quick else tuple(cfg.seeds)
    rounds = 10 if quick else cfg.rounds
    low = power_energy_gap(-5.0, seeds, rounds)
    high = power_energy_gap(5.0, seeds, rounds)
    every = all(opt <= mx for opt, mx in low)
    rel_low = float(np.mean([1 - opt / mx for opt, mx in low]))
    rel_high = float(np.mean([1 - opt / mx for opt, mx in high]))
    passed = every and rel_high < rel_low
    return CheckResult(8, "power control energy saving", passed,
                       f"optimised <= max-power in {sum(o <= m for o, m in low)}/{len(low)} seeds at -5 dB; "
                       f"mean relative saving {rel_low:.3f} at -5 dB, {rel_high:.3f} at +5 dB")


@_timed(None)
def check_iteration_growth(quick=False) -> CheckResult:
    """Bandwidth-search iterations grow by about one per halving of omega."""
    omegas = 10.0 ** -np.arange(1, 6)
    scen, _ = _scenarios(12 if quick else 50, seed=77)
    counts = np.zeros((len(scen), len(omegas)))
    keep = np.ones(len(scen), dtype=bool)
    for i, (beta, P, gain, I, G) in enumerate(scen):
        for j, om in enumerate(omegas):
            res = radio.allocate_bandwidth(beta, P, gain, I, G, _W, _N0, _E_MIN, om, 200)
            counts[i, j] = res.iterations
            keep[i] &= res.converged
    x = np.log2(1.0 / omegas)
    slope = float(np.polyfit(x, counts[keep].mean(axis=0), 1)[0])
    passed = abs(slope - 1.0) <= 0.5
    return CheckResult(9, "iteration growth per halving of omega", passed,
                       f"slope {slope:.3f} iterations per halving over {int(keep.sum())} scenarios")


@_timed(None)
def check_degenerate(quick=False) -> CheckResult:
    """One UE, one module, perfect channel, no energy price: plain gradient descent."""
    cfg = load_preset("degenerate_gd")
    rounds = 20 if quick else 100
    state = orc.build_state(cfg, 0)
    task = state.task
    eta = state.consts.eta
    w = state.adapters[0].delta.copy()
    shard = task.train[0]
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RateTermWarning)
        for _ in range(rounds):
            orc.run_round(state)
            w = w - eta * task.gradient(task.w0 + w, shard).reshape(w.shape)
            worst = max(worst, float(np.max(np.abs(state.adapters[0].delta - w))))
    return CheckResult(10, "degenerate reduction to gradient descent", worst <= 1e-10,
                       f"max deviation {worst:.2e} over {rounds} rounds")


@_timed(None)
def check_determinism(quick=False) -> CheckResult:
    """Repeated and parallel runs give byte-identical CSV files."""
    import tempfile

    from .cli import run_sweep

    cfg = load_preset("switching_strategies", rounds=5 if quick else 15, n_ues=6, constant_samples=400)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        a = run_sweep(cfg, {}, ["proposed", "greedy"], [3, 4], tmp / "a", workers=1)
        b = run_sweep(cfg, {}, ["proposed", "greedy"], [3, 4], tmp / "b", workers=1)
        c = run_sweep(cfg, {}, ["proposed", "greedy"], [3, 4], tmp / "c", workers=2)
        files = sorted(p.name for p in (tmp / "a").glob("*.csv"))
        same = all((tmp / "a" / f).read_bytes() == (tmp / d / f).read_bytes() for f in files for d in ("b", "c"))
        same &= sorted(p.name for p in (tmp / "c").glob("*.csv")) == files
        same &= a.read_bytes() == b.read_bytes() == c.read_bytes()
    return CheckResult(11, "determinism", bool(same), f"{len(files)} files identical across serial and parallel runs")


CHECKS = {
    1: check_allocation,
    2: check_bound,
    3: check_success_probability,
    4: check_lambert,
    5: check_power_gradient,
    6: check_primal_lp,
    7: check_strategy_order,
    8: check_power_energy,
    9: check_iteration_growth,
    10: check_degenerate,
    11: check_determinism,
}


def run_checks(only=None, quick: bool = False, report=None) -> list:
    """Run the selected checks in order; ``report`` is called with each result."""
    out = []
    for n in sorted(CHECKS if only is None else only):
        res = CHECKS[n](quick)
        out.append(res)
        if report is not None:
            report(res)
    return out
