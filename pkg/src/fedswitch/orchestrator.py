"""Round loop of the joint online optimisation.

Each round runs, in order:

1. Step 1: alternate bandwidth allocation and power control until every
   UE's relaxed objective settles.
2. Transmission: realised SINR, success events, local gradients and
   per-module aggregation, measured risk gap, bound and energy accounting.
3. Step 2: dual ascent and primal step per UE; the result is next round's
   subscription matrix.

All randomness comes from named streams derived from one root seed, and no
stream is consumed in a decision-dependent amount, so strategies run on the
same seed see the same data, geometry and channels.
"""

from __future__ import annotations

import math
import time
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import radio
from .bound import BoundState, RateTermWarning, SmoothnessConstants, estimate_constants, rate_terms_global, rate_terms_per_ue, risk_gap_bound
from .channel import LinkParams, sample_interference, success_probability
from .config import ExperimentConfig
from .energy import ComputeProfile, PayloadSizes, communication_energy, round_energy, relaxed_energy
from .fedsim import LoraAdapter, aggregate, local_gradient, make_task, measured_phi, sample_batch
from .switching import SwitchState, dual_update, primal_step, round_beta, switching_gradient

__all__ = [
    "RoundDecision",
    "RoundMetrics",
    "ExperimentState",
    "RoundError",
    "stream",
    "build_state",
    "run_round",
    "run_experiment",
    "summarize",
]

STREAMS = ("task", "geometry", "init", "constants", "channel", "sampling", "rounding")


class RoundError(RuntimeError):
    """A sub-module failed; the message carries the round context."""


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` derived from the root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


@dataclass
class RoundDecision:
    beta: np.ndarray
    P: np.ndarray
    delta: np.ndarray
    E_t: float


@dataclass
class RoundMetrics:
    round: int
    seed: int
    strategy: str
    phi_measured: float
    bound_term1: float
    bound_term2: float
    bound_term3: float
    bound_term4: float
    energy_total_J: float
    energy_comm_J: float
    success_rate: float
    E_t_s: float
    inner_iters: int
    flags: str
    risk_ensemble: float
    power_mean_W: float
    A_n: tuple
    B_n: tuple
    gamma: np.ndarray = field(repr=False, default=None)
    energy_per_ue_J: np.ndarray = field(repr=False, default=None)
    q_hat_trajectory: list = field(repr=False, default=None)
    wall_clock_s: float = 0.0

    @property
    def bound_total(self) -> float:
        return self.bound_term1 + self.bound_term2 + self.bound_term3 + self.bound_term4


@dataclass
class ExperimentState:
    config: ExperimentConfig
    seed: int
    strategy: str
    task: object
    links: list
    profile: ComputeProfile
    sizes: PayloadSizes
    consts: SmoothnessConstants
    adapters: list
    switch: list
    beta: np.ndarray
    B_prev: np.ndarray
    bound: BoundState
    rngs: dict
    t: int = 0
    frozen: bool = False
    last_E: float | None = None
    participation: np.ndarray = None

    @property
    def N(self) -> int:
        return len(self.adapters)

    @property
    def K(self) -> int:
        return len(self.links)


def _effective_modules(config: ExperimentConfig, strategy: str) -> int:
    return 1 if strategy == "vanilla" else config.n_modules


def _ue_distances(config: ExperimentConfig, rng) -> np.ndarray:
    lo, hi = config.ue_min_distance_m, config.cell_radius_m
    return np.sqrt(lo**2 + rng.random(config.n_ues) * (hi**2 - lo**2))


def build_state(config: ExperimentConfig, seed: int, strategy: str | None = None) -> ExperimentState:
    """Draw the task, geometry and adapters for one seed and set up the optimiser state."""
    strategy = strategy or config.strategy
    rngs = {name: stream(seed, name) for name in STREAMS}
    c = config
    task = make_task(
        c.task_mode, c.n_ues, c.n_features, c.n_outputs, c.samples_per_ue, c.dirichlet_concentration, c.ridge,
        rngs["task"], feature_radius=c.feature_radius, test_fraction=c.test_fraction, noise=c.data_noise,
        n_groups=c.n_groups or None, w0_scale=c.w0_scale, class_sep=c.class_sep,
    )
    d = _ue_distances(c, rngs["geometry"])
    links = [LinkParams(float(dk), c.alpha, c.theta, c.gnb_density_per_m2, c.bandwidth_hz, c.noise_density_w_per_hz)
             for dk in d]
    profile = ComputeProfile(c.cpu_frequency_hz, c.capacitance_coeff, c.cycles_per_bit, c.local_iterations)
    sizes = PayloadSizes(c.model_bits, c.upload_bits)
    consts = estimate_constants(task, rngs["constants"], zeta2=c.zeta2, n_samples=c.constant_samples)
    if c.learning_rate:
        consts = SmoothnessConstants(consts.epsilon, consts.xi, consts.zeta1, consts.zeta2, c.learning_rate)
    N = _effective_modules(c, strategy)
    # modules start from distinct A factors drawn in a fixed order
    adapters = [LoraAdapter(c.n_features, c.n_outputs, c.rank, rngs["init"], c.adapter_init_scale)
                for _ in range(c.n_modules)][:N]
    s_t = min(c.subscription_cap, N)
    switch = [SwitchState(np.zeros(N), np.full(N, c.participation_floor if N > 1 else 0.0), s_t, c.dual_step)
              for _ in range(c.n_ues)]
    # round-1 subscription: all modules if the cap allows, else s_t random modules per UE
    init_rng = stream(seed, "round1")
    if s_t >= N:
        beta = np.ones((N, c.n_ues), dtype=int)
    else:
        beta = np.zeros((N, c.n_ues), dtype=int)
        for k in range(c.n_ues):
            beta[init_rng.choice(N, size=s_t, replace=False), k] = 1
    for k in range(c.n_ues):
        switch[k].beta_hat = beta[:, k].astype(float)
    # B at t = 0 from an all-subscribed round
    B_prev = np.empty((N, c.n_ues))
    for k in range(c.n_ues):
        B_prev[:, k] = rate_terms_per_ue(consts, np.ones(N), np.ones(N), c.n_ues)[1]
    return ExperimentState(c, seed, strategy, task, links, profile, sizes, consts, adapters, switch, beta, B_prev,
                           BoundState(), rngs, participation=np.zeros((N, c.n_ues)))


def _expected_interference(config: ExperimentConfig, alpha: float) -> float:
    g, R = config.guard_radius_m, config.interferer_field_radius_m
    # phi * E[P] * E[|h|^2] * int_g^R r^-alpha 2 pi r dr
    ring = 2 * math.pi * (g ** (2 - alpha) - R ** (2 - alpha)) / (alpha - 2)
    return config.gnb_density_per_m2 * 0.5 * config.p_max_w * ring


def _q_hat_all(state, P, beta, delta, E_t):
    c = state.config
    return np.array([
        radio.q_hat(P[k], beta[:, k], delta[:, k], state.B_prev[:, k], state.consts, c.mu_per_j, E_t, state.links[k])
        for k in range(state.K)
    ])


def _step1(state: ExperimentState, gain, known_I):
    """Alternate the bandwidth search and power control."""
    c = state.config
    beta = state.beta
    N, K = beta.shape
    G = np.full(N, c.upload_bits)
    P = np.full(K, c.p_max_w)
    flags = set()
    trajectory = []
    q_prev = None
    q_tol = None
    alloc = None
    e = 0
    for e in range(1, c.e_max + 1):
        if beta.any():
            alloc = radio.allocate_bandwidth(beta, P, gain, known_I, G, c.bandwidth_hz, c.noise_density_w_per_hz,
                                             c.e_min_s, c.omega, c.j_max)
            E_t, delta = alloc.E_t, alloc.delta
            if alloc.floor_bound:
                flags.add("delay_floor")
            elif not alloc.converged:
                flags.add("alloc_nonconverged")
            if alloc.clipped[beta.astype(bool)].any():
                flags.add("delta_clipped")
        else:
            # nobody subscribes: keep the last target so unscheduled shares stay defined
            flags.add("idle")
            E_t = state.last_E if state.last_E is not None else c.e_min_s
            raw, _ = radio.required_delta(E_t, P * gain, known_I, G[:, None], c.bandwidth_hz, c.noise_density_w_per_hz)
            delta = np.clip(raw, radio.DELTA_MIN, 1.0)
        if state.strategy != "max-power":
            P = radio.optimize_power_batch(beta, delta, state.B_prev, state.consts, c.mu_per_j, E_t, state.links,
                                           c.p_max_w, c.p_min_w)
        q = _q_hat_all(state, P, beta, delta, E_t)
        trajectory.append(q)
        if q_prev is None:
            q_tol = c.q_th_rel * np.abs(q)
        else:
            if np.any(q > q_prev + 1e-9 * np.maximum(1.0, np.abs(q_prev))):
                flags.add("q_hat_increase")
            if np.all(np.abs(q - q_prev) <= q_tol):
                break
        q_prev = q
    else:
        flags.add("step1_cap")
    return RoundDecision(beta.copy(), P, delta, E_t), e, trajectory, flags


def _step2(state: ExperimentState, lam, C):
    """Switching update; returns next round's subscription matrix."""
    c = state.config
    N, K = state.beta.shape
    if state.strategy == "vanilla" or state.frozen:
        return state.beta.copy()
    new = np.zeros((N, K), dtype=int)
    for k in range(K):
        sw = state.switch[k]
        grad = switching_gradient(state.B_prev[:, k], lam[:, k], state.consts, c.mu_per_j, C[:, k])
        if state.strategy == "greedy":
            dual_next = np.zeros(N)
        else:
            dual_next = dual_update(sw, sw.v - sw.beta_hat)
        sw.beta_hat = primal_step(sw, grad, dual_next)
        sw.dual = dual_next
        new[:, k] = round_beta(sw.beta_hat, sw.s_t, state.rngs["rounding"])
    if state.strategy == "one-shot":
        state.frozen = True
    return new


def run_round(state: ExperimentState) -> tuple[RoundDecision, RoundMetrics]:
    """Execute one round and advance ``state`` to the next."""
    t0 = time.perf_counter()
    state.t += 1
    c = state.config
    try:
        return _run_round(state, t0)
    except Exception as exc:
        raise RoundError(f"round {state.t} (seed {state.seed}, strategy {state.strategy}): {exc}") from exc


def _run_round(state: ExperimentState, t0: float):
    c = state.config
    task = state.task
    N, K = state.beta.shape
    alpha = c.alpha

    # decision-independent draws: batches and channels for every UE
    batches = [sample_batch(task.train[k], c.batch_fraction, state.rngs["sampling"]) for k in range(K)]
    D_t = np.array([len(b) for b in batches], dtype=float)
    rho = D_t / D_t.sum()
    h = np.empty(K)
    I = np.empty(K)
    rng_ch = state.rngs["channel"]
    for k, link in enumerate(state.links):
        hk, Ik = sample_interference(link, c.interferer_field_radius_m, 1, rng_ch, c.p_max_w, c.guard_radius_m)
        h[k], I[k] = hk[0], Ik[0]
    d = np.array([l.d_k for l in state.links])
    gain = h * d ** (-alpha)
    known_I = I if c.interference_mode == "genie" else np.full(K, _expected_interference(c, alpha))

    decision, inner, trajectory, flags = _step1(state, gain, known_I)
    beta, P, delta, E_t = decision.beta, decision.P, decision.delta, decision.E_t
    state.last_E = E_t

    # transmission and learning
    sinr = h[None, :] * P[None, :] * d[None, :] ** (-alpha) / (I[None, :] + c.bandwidth_hz * delta * c.noise_density_w_per_hz)
    gamma = np.ones((N, K), dtype=int) if c.perfect_channel else (sinr >= c.theta).astype(int)
    sched = beta.astype(bool)
    energy_ue = np.zeros(K)
    comm_ue = np.zeros(K)
    for n, k in zip(*np.nonzero(sched)):
        energy_ue[k] += round_energy(state.profile, state.sizes, D_t[k], P[k], delta[n, k], sinr[n, k], state.links[k])
        comm_ue[k] += communication_energy(P[k], state.sizes, c.bandwidth_hz, delta[n, k], sinr[n, k])
    for n, adapter in enumerate(state.adapters):
        users = np.flatnonzero(sched[n] & (gamma[n] == 1))
        if users.size == 0:
            flags.add(f"no_update_m{n}")
            continue
        grads = np.stack([local_gradient(adapter, batches[k], task) for k in users])
        adapter.params, _, _ = aggregate(adapter.params, grads, D_t[users], beta[n, users], gamma[n, users],
                                         state.consts.eta * adapter.step_scale())
    state.participation += beta

    # measured risk gap and bound
    deltas = [a.delta for a in state.adapters]
    phi = measured_phi(task, deltas, rho)
    ref_risk = np.array([task.reference_risk(k) for k in range(K)])
    risk_ens = phi + float(rho @ ref_risk)
    lam = np.stack([success_probability(P[k], delta[:, k], state.links[k]) for k in range(K)], axis=1)
    if c.perfect_channel:
        lam = np.ones_like(lam)
    A, B = rate_terms_global(state.consts, rho, lam, beta, K)
    with warnings.catch_warnings():
        # recorded in the round flags instead
        warnings.simplefilter("ignore", RateTermWarning)
        valid = state.bound.advance(A, B)
    if not valid:
        flags.add("A_out_of_range")
    # the bound's first term scores the adapter alone, without the foundation
    gaps = np.stack([task.risks(np.asarray(deltas), task.test[k]) - ref_risk[k] for k in range(K)])
    w0_sq = float(np.sum(task.w0**2))
    terms = risk_gap_bound(state.bound, state.consts, rho, gaps, [len(s) for s in task.test], w0_sq)

    # switching for the next round
    C = np.array([[relaxed_energy(state.profile, state.sizes, D_t[k], P[k], E_t) for k in range(K)]] * N)
    B_now = np.stack([rate_terms_per_ue(state.consts, lam[:, k], beta[:, k], K)[1] for k in range(K)], axis=1)
    state.beta = _step2(state, lam, C)
    state.B_prev = B_now

    n_up = int(sched.sum())
    metrics = RoundMetrics(
        round=state.t, seed=state.seed, strategy=state.strategy, phi_measured=phi,
        bound_term1=terms.term1, bound_term2=terms.term2, bound_term3=terms.term3, bound_term4=terms.term4,
        energy_total_J=float(energy_ue.sum()), energy_comm_J=float(comm_ue.sum()),
        success_rate=float(gamma[sched].mean()) if n_up else 0.0, E_t_s=float(E_t), inner_iters=inner,
        flags=";".join(sorted(flags)), risk_ensemble=risk_ens, power_mean_W=float(P.mean()),
        A_n=tuple(float(a) for a in A), B_n=tuple(float(b) for b in B), gamma=gamma & sched,
        energy_per_ue_J=energy_ue, q_hat_trajectory=trajectory, wall_clock_s=time.perf_counter() - t0,
    )
    return decision, metrics


def run_experiment(config: ExperimentConfig, strategy: str | None = None, rounds: int | None = None,
                   seeds=None) -> list:
    """Run every seed for ``rounds`` rounds; returns RoundMetrics rows, seed-major."""
    strategy = strategy or config.strategy
    rounds = config.rounds if rounds is None else rounds
    seeds = config.seeds if seeds is None else seeds
    rows = []
    for seed in seeds:
        if rounds == 0:
            continue
        state = build_state(config, seed, strategy)
        for _ in range(rounds):
            rows.append(run_round(state)[1])
    return rows


def summarize(rows, phi_threshold: float = 0.0) -> dict:
    """Per-seed rounds-to-threshold, final risk gap and total energy."""
    out = {}
    for r in rows:
        s = out.setdefault(r.seed, {"rounds_to_threshold": None, "final_phi": None, "final_risk": None,
                                    "total_energy_J": 0.0, "total_comm_energy_J": 0.0, "rounds": 0})
        s["rounds"] += 1
        s["total_energy_J"] += r.energy_total_J
        s["total_comm_energy_J"] += r.energy_comm_J
        s["final_phi"] = r.phi_measured
        s["final_risk"] = r.risk_ensemble
        if s["rounds_to_threshold"] is None and phi_threshold > 0 and r.phi_measured <= phi_threshold:
            s["rounds_to_threshold"] = r.round
    return out
