"""Structural data-generating process for the demand/supply share system.

Demand:  ln S = ln lam - gamma ln Q_t + gamma (ln Z + ln pi) + eps (+ eta ln R)
Supply:  ln pi = tau + omega ln S + delta

At the normalization period ``theta`` import prices are one
(``ln Z + ln pi = 0``), which pins ``ln Z_i,theta`` through the supply
equation. Elsewhere ``ln Z`` is an exogenous random walk anchored at theta
and shares follow the reduced form. Shares are closed by within-period
normalization; the period constant this adds is absorbed by time effects.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ArmingtonError, SingularRecoveryError
from .panel import Panel

__all__ = [
    "DgpConfig",
    "TruthRecord",
    "MonteCarloSummary",
    "MethodSummary",
    "reduced_form_oracle",
    "generate_panel",
    "generate_moment_panel",
    "run_monte_carlo",
    "MC_METHODS",
]

MC_METHODS = ("sur", "naive", "ivfe", "fm", "iiv", "sur_stri")


@dataclass(frozen=True)
class DgpConfig:
    """Structural parameters and noise processes.

    ``lambdas`` of None draws preference weights from a symmetric Dirichlet
    with ``lambda_concentration``; the draw depends only on ``seed`` so it
    is held fixed across Monte Carlo replications. ``theta`` is a period
    label in ``1..T`` (default: the last period).
    """

    N: int = 20
    T: int = 60
    sigma: float = 3.0
    omega: float = 0.5
    tau: float = 0.0
    theta: int | None = None
    lambdas: tuple | None = None
    lambda_concentration: float = 1.0
    q_amplitude: float = 0.1
    q_drift: float = 0.002
    q_period: float = 12.0
    z_scale: float | tuple = 0.05
    eps_scale: float = 0.05
    delta_scale: float = 0.05
    shock_dist: str = "gaussian"
    t_df: float = 5.0
    eta: float | None = None
    stri_scale: float = 0.05
    missing_rate: float = 0.0
    seed: int = 12345

    def __post_init__(self):
        if self.N < 2 or self.T < 2:
            raise ValueError("N and T must be at least 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        gamma = 1.0 - self.sigma
        if abs(1.0 - gamma * self.omega) <= 1e-12:
            raise SingularRecoveryError(
                f"1 - gamma*omega = 0 (gamma={gamma:g}, omega={self.omega:g}): reduced form undefined"
            )
        scales = [self.eps_scale, self.delta_scale, self.stri_scale, *np.atleast_1d(self.z_scale)]
        if min(scales) < 0:
            raise ValueError("shock scales must be non-negative")
        if self.shock_dist not in ("gaussian", "t"):
            raise ValueError("shock_dist must be 'gaussian' or 't'")
        if self.shock_dist == "t" and self.t_df <= 2:
            raise ValueError("t_df must exceed 2 for a finite variance")
        if self.lambdas is not None:
            lam = np.asarray(self.lambdas, dtype=float)
            if lam.shape != (self.N,) or np.any(lam <= 0) or abs(lam.sum() - 1) > 1e-12:
                raise ValueError("lambdas must be N positive weights summing to 1")
            object.__setattr__(self, "lambdas", tuple(float(x) for x in lam))
        theta = self.T if self.theta is None else int(self.theta)
        if not 1 <= theta <= self.T:
            raise ValueError(f"theta must be in 1..{self.T}")
        object.__setattr__(self, "theta", theta)
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must be in [0, 1)")

    @property
    def gamma(self) -> float:
        return 1.0 - self.sigma

    def to_dict(self):
        d = asdict(self)
        if isinstance(d["z_scale"], tuple):
            d["z_scale"] = list(d["z_scale"])
        if d["lambdas"] is not None:
            d["lambdas"] = list(d["lambdas"])
        return d


@dataclass(eq=False)
class TruthRecord:
    config: DgpConfig
    lambdas: np.ndarray
    ln_q: np.ndarray
    ln_z: np.ndarray
    ln_pi: np.ndarray
    ln_s_latent: np.ndarray
    eps: np.ndarray
    delta: np.ndarray
    ln_r: np.ndarray | None
    kappa: float
    phi: float
    mu: float | None

    def to_dict(self):
        arr = lambda a: None if a is None else np.asarray(a).tolist()  # noqa: E731
        return {
            "config": self.config.to_dict(),
            "sigma": self.config.sigma,
            "gamma": self.config.gamma,
            "omega": self.config.omega,
            "tau": self.config.tau,
            "theta": self.config.theta,
            "kappa": self.kappa,
            "phi": self.phi,
            "mu": self.mu,
            "eta": self.config.eta,
            "lambdas": arr(self.lambdas),
            "ln_q": arr(self.ln_q),
            "ln_z": arr(self.ln_z),
            "ln_pi": arr(self.ln_pi),
            "eps": arr(self.eps),
            "delta": arr(self.delta),
            "ln_r": arr(self.ln_r),
        }


def reduced_form_oracle(config: DgpConfig):
    """``(kappa, phi) = (gamma, 1) / (1 - gamma omega)``."""
    gamma = config.gamma
    den = 1.0 - gamma * config.omega
    if den == 0:
        raise SingularRecoveryError("1 - gamma*omega = 0")
    return gamma / den, 1.0 / den


def _seed_sequence(seed, *key):
    return np.random.SeedSequence(seed, spawn_key=tuple(key))


def realize_lambdas(config: DgpConfig) -> np.ndarray:
    if config.lambdas is not None:
        return np.asarray(config.lambdas)
    rng = np.random.default_rng(_seed_sequence(config.seed, 0))
    lam = rng.dirichlet(np.full(config.N, config.lambda_concentration))
    # keep logs finite under tiny Dirichlet draws
    lam = np.maximum(lam, 1e-8)
    return lam / lam.sum()


def _shocks(rng, config, scale, shape):
    if scale == 0:
        return np.zeros(shape)
    if config.shock_dist == "t":
        df = config.t_df
        return scale * rng.standard_t(df, size=shape) / math.sqrt(df / (df - 2))
    return scale * rng.standard_normal(shape)


def generate_panel(config: DgpConfig, replication: int | None = None):
    """Draw one synthetic panel and the structural truth behind it.

    ``replication`` selects an independent shock stream derived from
    ``(config.seed, replication)``; the preference weights do not depend on
    it.

    Returns
    -------
    panel : Panel
        Countries ``C01..``, periods ``1..T``; quantities are ``V / pi`` so
        that ``Z V / X`` recovers the import price ``Z pi``.
    truth : TruthRecord
    """
    N, T = config.N, config.T
    key = (1,) if replication is None else (2, int(replication))
    rng = np.random.default_rng(_seed_sequence(config.seed, *key))
    gamma, omega, tau = config.gamma, config.omega, config.tau
    kappa, phi = reduced_form_oracle(config)
    j = config.theta - 1
    lam = realize_lambdas(config)
    ln_lam = np.log(lam)

    t = np.arange(1, T + 1, dtype=float)
    wave = lambda s: config.q_amplitude * np.sin(2 * np.pi * s / config.q_period)  # noqa: E731
    ln_q = wave(t) - wave(t[j]) + config.q_drift * (t - t[j])

    eps = _shocks(rng, config, config.eps_scale, (N, T))
    delta = _shocks(rng, config, config.delta_scale, (N, T))
    z_scale = np.broadcast_to(np.asarray(config.z_scale, dtype=float), (N,))
    steps = _shocks(rng, config, 1.0, (N, T)) * z_scale[:, None]

    ln_r = None
    eta = 0.0 if config.eta is None else config.eta
    mu = None
    demand_shift = np.zeros((N, T))
    if config.eta is not None:
        base = np.log(rng.uniform(0.1, 0.5, size=N))
        walk = np.cumsum(_shocks(rng, config, config.stri_scale, (N, T)), axis=1)
        ln_r = np.minimum(base[:, None] + walk - walk[:, [j]], 0.0)
        demand_shift = eta * ln_r
        mu = eta * phi
    missing = rng.uniform(size=(N, T)) < config.missing_rate

    # normalization period: prices are one, supply pins the exchange rate
    ln_s_theta = ln_lam - gamma * ln_q[j] + eps[:, j] + demand_shift[:, j]
    ln_pi_theta = tau + omega * ln_s_theta + delta[:, j]
    ln_z = np.empty((N, T))
    ln_z[:, j] = -ln_pi_theta
    for c in range(j + 1, T):
        ln_z[:, c] = ln_z[:, c - 1] + steps[:, c]
    for c in range(j - 1, -1, -1):
        ln_z[:, c] = ln_z[:, c + 1] - steps[:, c + 1]

    ln_s = (
        phi * ln_lam[:, None]
        + kappa * (tau - ln_q[None, :])
        + kappa * ln_z
        + phi * (eps + gamma * delta)
        + phi * demand_shift
    )
    ln_pi = tau + omega * ln_s + delta

    shares = np.exp(ln_s - ln_s.max(axis=0))
    present = ~missing
    present[:, j] = True
    shares = np.where(present, shares, 0.0)
    shares = shares / shares.sum(axis=0)
    value = np.where(present, shares, np.nan)
    fx = np.where(present, np.exp(ln_z), np.nan)
    qty = value / np.exp(ln_pi)
    stri = None if ln_r is None else np.where(present, np.exp(ln_r), np.nan)

    panel = Panel(
        countries=[f"C{i + 1:02d}" for i in range(N)],
        periods=list(range(1, T + 1)),
        value=value,
        fx_rate=fx,
        quantity=qty,
        stri=stri,
    )
    truth = TruthRecord(
        config=config,
        lambdas=lam,
        ln_q=ln_q,
        ln_z=ln_z,
        ln_pi=ln_pi,
        ln_s_latent=ln_s,
        eps=eps,
        delta=delta,
        ln_r=ln_r,
        kappa=kappa,
        phi=phi,
        mu=mu,
    )
    return panel, truth


def generate_moment_panel(
    gamma: float = -2.0,
    rho: float = 0.5,
    N: int = 20,
    T: int = 100,
    seed: int = 12345,
    replication: int = 0,
    scale_range=(0.5, 2.0),
):
    """Panel whose demeaned logs follow a simultaneous pair with independent errors.

    ``s = gamma z + mu`` and ``z = rho s + nu`` hold for the double-demeaned
    log shares ``s`` and log exchange rates ``z``, with ``mu`` and ``nu``
    independent and their standard deviations drawn per country from
    ``scale_range``. That cross-country heteroskedasticity is what identifies
    the moment-product estimator; the structural generator above, whose
    exchange rates are exogenous, does not have it.

    Returns
    -------
    panel : Panel
        No quantities.
    errors : dict
        ``mu`` and ``nu`` arrays (before demeaning).
    """
    if abs(1.0 - gamma * rho) < 1e-12:
        raise SingularRecoveryError("1 - gamma*rho = 0: simultaneous pair has no solution")
    rng = np.random.default_rng(_seed_sequence(seed, 3, int(replication)))
    lo, hi = scale_range
    sd_mu = rng.uniform(lo, hi, size=(N, 1))
    sd_nu = rng.uniform(lo, hi, size=(N, 1))
    mu = sd_mu * rng.standard_normal((N, T))
    nu = sd_nu * rng.standard_normal((N, T))
    s = (gamma * nu + mu) / (1.0 - gamma * rho)
    z = rho * s + nu
    ln_s = s + rng.normal(0, 1, (N, 1)) + rng.normal(0, 0.2, (1, T))
    ln_z = z + rng.normal(0, 1, (N, 1)) + rng.normal(0, 0.2, (1, T))
    shares = np.exp(ln_s - ln_s.max(axis=0))
    shares /= shares.sum(axis=0)
    panel = Panel(
        countries=[f"C{i + 1:02d}" for i in range(N)],
        periods=list(range(1, T + 1)),
        value=shares,
        fx_rate=np.exp(ln_z),
    )
    return panel, {"mu": mu, "nu": nu}


@dataclass
class MethodSummary:
    """Sampling distribution of one estimator across replications.

    For ``naive`` the target is ``kappa`` and ``estimates`` are slopes;
    for every other method the target is ``sigma``.
    """

    method: str
    target: float
    estimates: np.ndarray
    ses: np.ndarray
    n_fail: int = 0
    failures: dict = field(default_factory=dict)

    @property
    def n_ok(self) -> int:
        return int(self.estimates.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates)) if self.n_ok else float("nan")

    @property
    def sd(self) -> float:
        return float(np.std(self.estimates, ddof=1)) if self.n_ok > 1 else float("nan")

    @property
    def mc_se(self) -> float:
        return self.sd / math.sqrt(self.n_ok) if self.n_ok > 1 else float("nan")

    @property
    def bias(self) -> float:
        return self.mean - self.target

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.estimates - self.target) ** 2))) if self.n_ok else float("nan")

    @property
    def coverage(self) -> float:
        ok = np.isfinite(self.ses)
        if not ok.any():
            return float("nan")
        hit = np.abs(self.estimates[ok] - self.target) <= 1.959963984540054 * self.ses[ok]
        return float(hit.mean())

    @property
    def failure_rate(self) -> float:
        total = self.n_ok + self.n_fail
        return self.n_fail / total if total else float("nan")

    def to_dict(self):
        f = lambda x: None if not math.isfinite(x) else x  # noqa: E731
        return {
            "method": self.method,
            "target": self.target,
            "mean": f(self.mean),
            "bias": f(self.bias),
            "rmse": f(self.rmse),
            "sd": f(self.sd),
            "mc_se": f(self.mc_se),
            "coverage": f(self.coverage),
            "n_ok": self.n_ok,
            "n_fail": self.n_fail,
            "failure_rate": f(self.failure_rate),
            "failures": dict(self.failures),
        }


@dataclass
class MonteCarloSummary:
    config: DgpConfig
    reps: int
    methods: dict
    seeds: list
    kappa: float
    reports: list | None = None
    elapsed: float = 0.0

    def __getitem__(self, method) -> MethodSummary:
        return self.methods[method]

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "reps": self.reps,
            "sigma": self.config.sigma,
            "kappa": self.kappa,
            "seeds": self.seeds,
            "methods": {k: v.to_dict() for k, v in self.methods.items()},
        }


def _run_one(args):
    from . import pipelines

    config, r, methods, theta, keep = args
    panel, truth = generate_panel(config, replication=r)
    theta = config.theta if theta == "truth" else theta
    out = {}
    fm_report = None
    for m in methods:
        try:
            if m == "naive":
                res = pipelines.naive_slope(panel)
                out[m] = (float(res.coefficients[0]), float(res.se[0]), None)
            elif m == "sur":
                rep = pipelines.estimate_sur(panel, theta=theta)
                out[m] = (rep.sigma, rep.sigma_se, rep if keep else None)
            elif m == "sur_stri":
                rep = pipelines.estimate_sur_stri(panel, theta=theta)
                out[m] = (rep.sigma, rep.sigma_se, rep if keep else None)
            elif m == "ivfe":
                rep = pipelines.estimate_ivfe(panel)
                out[m] = (rep.sigma, rep.sigma_se, rep if keep else None)
            elif m == "fm":
                fm_report = pipelines.estimate_fm(panel)
                out[m] = (fm_report.sigma, fm_report.sigma_se, fm_report if keep else None)
            elif m == "iiv":
                fm_report = fm_report or pipelines.estimate_fm(panel)
                rep = pipelines.estimate_iiv(panel, fm_report=fm_report)
                out[m] = (rep.sigma, rep.sigma_se, rep if keep else None)
            else:
                raise ValueError(f"unknown method {m!r}")
        except ArmingtonError as exc:
            out[m] = exc.kind
    return out


def run_monte_carlo(
    config: DgpConfig,
    methods=("sur", "naive", "ivfe"),
    reps: int = 200,
    theta="truth",
    workers: int = 1,
    keep_reports: bool = False,
) -> MonteCarloSummary:
    """Replicate ``generate_panel`` and score each estimator.

    Replication ``r`` draws shocks from a stream derived from
    ``(config.seed, r)``, so results do not depend on ``workers`` or on
    execution order. Failed replications (package errors such as complex FM
    roots) are counted per method and excluded.

    Parameters
    ----------
    theta : "truth", "min-rss", "last" or int
        Normalization policy passed to the SUR estimators; ``"truth"`` uses
        the configuration's own ``theta``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    config = replace(config, lambdas=tuple(realize_lambdas(config)))
    kappa, _ = reduced_form_oracle(config)
    jobs = [(config, r, tuple(methods), theta, keep_reports) for r in range(reps)]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    elapsed = time.perf_counter() - start

    summaries = {}
    reports = [] if keep_reports else None
    for m in methods:
        est, ses, failures = [], [], {}
        for res in results:
            v = res[m]
            if isinstance(v, str):
                failures[v] = failures.get(v, 0) + 1
                continue
            est.append(v[0])
            ses.append(np.nan if v[1] is None else v[1])
            if keep_reports and v[2] is not None:
                reports.append(v[2])
        target = kappa if m == "naive" else config.sigma
        summaries[m] = MethodSummary(
            method=m,
            target=target,
            estimates=np.asarray(est, dtype=float),
            ses=np.asarray(ses, dtype=float),
            n_fail=sum(failures.values()),
            failures=failures,
        )
    return MonteCarloSummary(
        config=config,
        reps=reps,
        methods=summaries,
        seeds=[[config.seed, 2, r] for r in range(reps)],
        kappa=kappa,
        reports=reports,
        elapsed=elapsed,
    )
