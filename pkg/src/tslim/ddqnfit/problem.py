"""Fitting a reference event into a load-model family.

Stage one searches compositions with the double-Q agent; each composition is
scored by the mean loss of ``m`` parameter sets drawn uniformly from the
range table.  The best compositions are ranked by pinball score and stage
two refines the parameters of the winner by Monte-Carlo search.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import AllFailed, InitError, NoCandidate, ValidationError
from ..loadmodels.composite import (
    CLM_LABELS,
    ZIP_IM_LABELS,
    ClmLiteModel,
    ZipCoeffs,
    ZipImModel,
    ZipModel,
)
from ..loadmodels.playback import playback
from ..loadmodels.presets import apply_params, default_model, load_ranges
from ..loadmodels.static import ZipParams, zip_pq
from .agent import HyperParams, QPair, TrainingLog, action_space, apply_action, reward, train, uniform_state
from .loss import LossConfig, PinballConfig, pinball_score, rmse, trajectory_loss

FAMILY_BLOCKS = {"zip": (3, 3), "zip_im": (2,), "clm_lite": (6,)}
FAMILY_LABELS = {
    "zip": ("pZ", "pI", "pP", "qZ", "qI", "qP"),
    "zip_im": ZIP_IM_LABELS,
    "clm_lite": CLM_LABELS,
}
FAMILY_ALIASES = {"zip": "zip", "zip+im": "zip_im", "zip_im": "zip_im", "clm-lite": "clm_lite", "clm_lite": "clm_lite"}


def family_name(name: str) -> str:
    try:
        return FAMILY_ALIASES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown model family {name!r}") from None


@dataclass
class FitProblem:
    family: str
    times: np.ndarray
    voltage: np.ndarray  # complex substation voltage
    p_ref: np.ndarray
    q_ref: np.ndarray
    event_times: tuple[float, ...] = ()
    ranges: dict = field(default_factory=dict)  # family range table
    base_model: object = None
    loss: LossConfig = LossConfig()
    bus: int | None = None

    def __post_init__(self):
        self.family = family_name(self.family)
        n = len(self.times)
        if not (len(self.voltage) == len(self.p_ref) == len(self.q_ref) == n) or n < 2:
            raise ValidationError("reference series must share one time grid of at least two samples")
        if not np.all(np.isfinite(self.p_ref)) or not np.all(np.isfinite(self.q_ref)):
            raise ValidationError("reference series contain non-finite values")
        if self.base_model is None:
            table = load_ranges()
            self.base_model = default_model(self.family, table)
            if not self.ranges:
                self.ranges = dict(table.get(self.family, {}))

    @classmethod
    def from_trajectory(cls, family, traj, bus=None, events=(), ranges=None, loss=LossConfig()):
        bus = traj.buses[0] if bus is None else bus
        _, p, q = traj.bus_series(bus)
        fam = family_name(family)
        table = load_ranges(ranges) if isinstance(ranges, (str, type(None))) else ranges
        return cls(
            family=fam,
            times=np.asarray(traj.times, dtype=float),
            voltage=traj.bus_voltage(bus),
            p_ref=np.asarray(p, dtype=float),
            q_ref=np.asarray(q, dtype=float),
            event_times=tuple(float(e.time) for e in events),
            ranges=dict(table.get(fam, {})),
            base_model=default_model(fam, table),
            loss=loss,
            bus=bus,
        )

    @property
    def blocks(self) -> tuple[int, ...]:
        return FAMILY_BLOCKS[self.family]

    @property
    def n_components(self) -> int:
        return sum(self.blocks)

    @property
    def labels(self) -> tuple[str, ...]:
        return FAMILY_LABELS[self.family]

    def model_for(self, composition, params: dict | None = None):
        """Model with the given composition and (possibly batched) parameters."""
        f = [float(x) for x in composition]
        if self.family == "zip":
            coeffs = ZipCoeffs(f[0], f[1], f[3], f[4])
            model = dataclasses.replace(self.base_model, coeffs=coeffs)
        else:
            model = dataclasses.replace(self.base_model, fractions=tuple(f))
        return apply_params(model, params or {})

    def simulate(self, composition, params: dict | None = None):
        """Playback of one composition; ``(p, q)`` with a leading batch axis."""
        if self.family == "zip":
            m = self.model_for(composition)
            v = np.abs(self.voltage)
            zp = ZipParams(self.p_ref[0], self.q_ref[0], v[0], *m.coeffs.p, *m.coeffs.q, v_break=m.v_break)
            p, q = zip_pq(zp, v)
            return p[None, :], q[None, :]
        params = params or {}
        model = self.model_for(composition, params)
        try:
            p, q = playback(model, self.times, self.voltage, self.p_ref[0], self.q_ref[0], self.event_times)
            return np.atleast_2d(p), np.atleast_2d(q)
        except InitError:
            pass
        # some draws cannot be initialised: run them one by one, failures as NaN
        m = max((np.size(v) for v in params.values()), default=1)
        n = len(self.times)
        p_all = np.full((m, n), np.nan)
        q_all = np.full((m, n), np.nan)
        for i in range(m):
            single = {k: np.asarray(v).reshape(-1)[i] if np.size(v) > 1 else v for k, v in params.items()}
            try:
                p, q = playback(self.model_for(composition, single), self.times, self.voltage,
                                self.p_ref[0], self.q_ref[0], self.event_times)
                p_all[i], q_all[i] = p, q
            except InitError:
                continue
        return p_all, q_all

    def losses(self, p, q) -> np.ndarray:
        """Per-sample loss; NaN where the sample's simulation failed."""
        ok = np.all(np.isfinite(p), axis=1) & np.all(np.isfinite(q), axis=1)
        out = np.full(p.shape[0], np.nan)
        if np.any(ok):
            out[ok] = trajectory_loss(p[ok], q[ok], self.p_ref, self.q_ref, self.loss)
        return out


def composition_key(f) -> tuple[int, ...]:
    return tuple(int(round(float(x) * 1e9)) for x in f)


def composition_rng(seed: int, f, stream: int = 0) -> np.random.Generator:
    key = [k % (2**63) for k in composition_key(f)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, *key]))


def draw_params(ranges: dict, rng: np.random.Generator, m: int) -> dict:
    return {k: rng.uniform(lo, hi, size=m) for k, (lo, hi) in sorted(ranges.items())}


class CompositionEvaluator:
    """Cached mean-loss evaluation of compositions.

    Failed simulations score ``max(10 * worst valid loss seen so far, 1)``.
    """

    def __init__(self, problem: FitProblem, m: int, seed: int, penalty_floor: float = 1.0):
        self.problem = problem
        self.m = 1 if problem.family == "zip" or not problem.ranges else m
        self.seed = seed
        self.penalty_floor = penalty_floor
        self.worst_valid = 0.0
        self.cache: dict[tuple[int, ...], tuple[np.ndarray, float]] = {}
        self.best_loss = math.inf
        self.n_simulations = 0

    def penalty(self) -> float:
        return max(10.0 * self.worst_valid, self.penalty_floor)

    def run(self, f):
        """``(mean_loss, p_samples, q_samples, params)`` for composition ``f``."""
        pb = self.problem
        params = draw_params(pb.ranges, composition_rng(self.seed, f), self.m) if self.m > 1 or pb.ranges else {}
        if pb.family == "zip":
            params = {}
        p, q = pb.simulate(f, params)
        self.n_simulations += p.shape[0]
        losses = pb.losses(p, q)
        valid = np.isfinite(losses)
        if np.any(valid):
            self.worst_valid = max(self.worst_valid, float(np.max(losses[valid])))
        losses = np.where(valid, losses, self.penalty())
        return float(np.mean(losses)), p, q, params

    def evaluate(self, f) -> float:
        key = composition_key(f)
        hit = self.cache.get(key)
        if hit is None:
            loss = self.run(f)[0]
            self.cache[key] = (np.array(f, dtype=float), loss)
            self.best_loss = min(self.best_loss, loss)
            return loss
        return hit[1]


def evaluate_composition(problem: FitProblem, f, m: int, seed: int):
    """Mean loss over ``m`` parameter draws and the sampled trajectories."""
    ev = CompositionEvaluator(problem, m, seed)
    loss, p, q, _ = ev.run(f)
    return loss, (p, q)


class CompositionEnv:
    """Environment wrapper: state = composition, reward from the evaluator."""

    def __init__(self, evaluator: CompositionEvaluator, hp: HyperParams):
        self.ev = evaluator
        self.hp = hp
        self.blocks = evaluator.problem.blocks
        self.actions = action_space(self.blocks, hp.delta_f)
        self.n_state = sum(self.blocks)
        self.n_actions = len(self.actions)
        self.partial_moves = 0
        self.start = uniform_state(self.blocks, hp.delta_f if hp.lattice_start else None)
        if hp.reward_scale == "auto":
            # losses are divided by the loss of the starting composition so
            # that rewards are O(1) whatever the units of the reference
            base = evaluator.evaluate(self.start)
            self.scale = 1.0 / base if base > 0 else 1.0
        else:
            self.scale = float(hp.reward_scale)

    def shape(self, loss: float) -> float:
        """Monotone rescaling of a loss before it is turned into a reward."""
        if self.hp.reward_transform == "log":
            # log1p(loss / threshold): resolves ratios near the optimum
            return math.log1p(loss / self.hp.loss_threshold)
        return loss * self.scale

    @property
    def best_loss(self):
        return self.ev.best_loss

    def reset(self, rng):
        return self.start.copy()

    def step(self, s, a):
        s2, partial = apply_action(s, self.actions[a], self.blocks)
        self.partial_moves += int(partial)
        loss = self.ev.evaluate(s2)
        r, done = reward(self.shape(loss), self.shape(self.hp.loss_threshold))
        return s2, r, done


@dataclass
class CandidateSolution:
    composition: tuple[float, ...]
    mean_loss: float
    labels: tuple[str, ...] = ()
    pinball_score: float | None = None
    best_params: dict | None = None
    final_loss: float | None = None

    def as_dict(self) -> dict:
        return {
            "composition": dict(zip(self.labels, [round(x, 12) for x in self.composition])),
            "mean_loss": self.mean_loss,
            "pinball_score": self.pinball_score,
            "best_params": None if self.best_params is None else {k: float(v) for k, v in sorted(self.best_params.items())},
            "final_loss": self.final_loss,
        }


def top_candidates(evaluator: CompositionEvaluator, k: int) -> list[CandidateSolution]:
    penalty = evaluator.penalty_floor
    rows = sorted(evaluator.cache.values(), key=lambda fl: (fl[1], tuple(fl[0])))
    labels = evaluator.problem.labels
    out = [CandidateSolution(tuple(float(x) for x in f), loss, labels) for f, loss in rows if loss < max(penalty, 10 * evaluator.worst_valid)]
    if not out:
        raise NoCandidate("no composition scored below the failure penalty; check the parameter ranges")
    return out[:k]


def train_stage_one(problem: FitProblem, hp: HyperParams, seed: int, evaluator: CompositionEvaluator | None = None):
    """Run the agent; returns ``(top-K candidates, training log, evaluator, qpair)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    ev = evaluator or CompositionEvaluator(problem, hp.m_samples, seed)
    env = CompositionEnv(ev, hp)
    qpair = QPair.create(env.n_state, env.n_actions, hp.hidden, rng)
    qpair, log = train(env, hp, rng, qpair=qpair, log=TrainingLog())
    return top_candidates(ev, hp.top_k), log, ev, qpair


def rank_candidates(candidates, problem: FitProblem, pcfg: PinballConfig, evaluator: CompositionEvaluator):
    """Sort by pinball score of the sampled trajectories (ties: mean loss, then composition)."""
    scored = []
    for c in candidates:
        _, p, q, _ = evaluator.run(c.composition)
        ok = np.all(np.isfinite(p), axis=1) & np.all(np.isfinite(q), axis=1)
        score = pinball_score(p[ok], q[ok], problem.p_ref, problem.q_ref, pcfg) if np.any(ok) else math.inf
        scored.append(dataclasses.replace(c, pinball_score=score))
    return sorted(scored, key=lambda c: (c.pinball_score, c.mean_loss, c.composition))


def stage_two_monte_carlo(problem: FitProblem, composition, n_draws: int, seed: int, chunk: int = 16):
    """Best of ``n_draws`` uniform parameter sets at a fixed composition.

    Returns ``(params, loss, p, q)``.  Families without sampled parameters
    pass straight through with a single simulation.
    """
    ranges = problem.ranges
    if problem.family == "zip" or not ranges:
        p, q = problem.simulate(composition)
        loss = float(problem.losses(p, q)[0])
        if not math.isfinite(loss):
            raise AllFailed("the only simulation failed")
        return {}, loss, p[0], q[0]
    if all(lo == hi for lo, hi in ranges.values()):
        n_draws = 1
    rng = composition_rng(seed, composition, stream=2)
    params = draw_params(ranges, rng, n_draws)
    best = (math.inf, None, None, None)
    for start in range(0, n_draws, chunk):
        part = {k: v[start : start + chunk] for k, v in params.items()}
        p, q = problem.simulate(composition, part)
        losses = problem.losses(p, q)
        if np.all(~np.isfinite(losses)):
            continue
        i = int(np.nanargmin(losses))
        if losses[i] < best[0]:
            best = (float(losses[i]), {k: float(v[i]) for k, v in part.items()}, p[i], q[i])
    if best[1] is None:
        raise AllFailed(f"all {n_draws} stage-two draws failed")
    loss, chosen, p, q = best
    return chosen, loss, p, q


@dataclass
class FitResult:
    family: str
    candidates: list[CandidateSolution]
    best: CandidateSolution
    model: object
    p_fit: np.ndarray
    q_fit: np.ndarray
    rmse_p: float
    rmse_q: float
    log: TrainingLog
    n_simulations: int = 0


def fit(problem: FitProblem, hp: HyperParams = HyperParams(), seed: int = 0, n_draws: int = 64,
        pcfg: PinballConfig = PinballConfig()) -> FitResult:
    """Stage one, pinball ranking, then stage two on the top-ranked composition."""
    cands, log, ev, _ = train_stage_one(problem, hp, seed)
    ranked = rank_candidates(cands, problem, pcfg, ev)
    top = ranked[0]
    params, loss, p, q = stage_two_monte_carlo(problem, top.composition, n_draws, seed)
    top = dataclasses.replace(top, best_params=params, final_loss=loss)
    ranked[0] = top
    model = problem.model_for(top.composition, params)
    return FitResult(
        family=problem.family,
        candidates=ranked,
        best=top,
        model=model,
        p_fit=p,
        q_fit=q,
        rmse_p=rmse(p, problem.p_ref),
        rmse_q=rmse(q, problem.q_ref),
        log=log,
        n_simulations=ev.n_simulations,
    )


def grid_search(problem: FitProblem, delta_f: float = 0.05):
    """Exhaustive minimiser over the ``delta_f`` lattice of the ZIP family.

    Both simplexes are searched; since the P and Q losses are separable the
    two blocks are minimised independently, and the loss of the combination
    is the sum.
    """
    if problem.family != "zip":
        raise ValidationError("grid search is implemented for the ZIP family")
    n = int(round(1 / delta_f))
    pts = [(i / n, j / n, (n - i - j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    v = np.abs(problem.voltage)
    cfg = problem.loss
    from .loss import channel_loss

    def block_best(ref, base):
        best = (math.inf, None)
        for c in pts:
            zp = ZipParams(base, base, v[0], *c, *c, v_break=problem.base_model.v_break)
            series, _ = zip_pq(zp, v)
            val = float(channel_loss(series, ref, cfg))
            if val < best[0]:
                best = (val, c)
        return best

    lp, cp = block_best(problem.p_ref, problem.p_ref[0])
    lq, cq = block_best(problem.q_ref, problem.q_ref[0])
    return (*cp, *cq), cfg.w_p * lp + cfg.w_q * lq
