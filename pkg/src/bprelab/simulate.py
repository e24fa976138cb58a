"""Monte Carlo trajectory engine for (Z_n, W_n) paths and A_hat accumulators.

Replica i draws from its own generator seeded by
``SeedSequence(master_seed, spawn_key=(i,))``, a counter-based split that is
independent of scheduling, so results are bit-identical for a given config
no matter how replicas are chunked across threads. Generation totals are
drawn exactly (multinomial category counts of the parent population dotted
with the support, which is the exact law of the sum of per-individual
draws); populations above pop_cap stop simulating and are flagged.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .environment import EnvPath, Environment, FixedPath, IIDMixture
from .errors import ParameterError
from .offspring import OffspringLaw, _INT64_SAFE

STATUS_COMPLETED = 0
STATUS_EXTINCT = 1
STATUS_CAPPED = 2

_DUMP_FORMAT = 1

MODE_QUENCHED = "quenched"
MODE_ANNEALED = "annealed"


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulation batch.

    mode "quenched" samples a single environment path from path_seed (or the
    fixed path's prefix) shared by every replica; "annealed" gives each
    replica its own i.i.d. path from its replica stream.
    """

    env: Environment
    mode: str
    n_max: int
    replicas: int
    master_seed: int
    path_seed: int | None = None
    pop_cap: int = 10_000_000
    rho_grid: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode not in (MODE_QUENCHED, MODE_ANNEALED):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.n_max < 1:
            raise ParameterError("n_max must be >= 1")
        if self.replicas < 1:
            raise ParameterError("replicas must be >= 1")
        if self.pop_cap < 1000:
            raise ParameterError("pop_cap must be >= 1000")
        if any(r < 1.0 for r in self.rho_grid):
            raise ParameterError("rho grid values must be >= 1")
        if self.mode == MODE_ANNEALED and not isinstance(self.env, IIDMixture):
            raise ParameterError("annealed mode needs an i.i.d. mixture environment")
        if (
            self.mode == MODE_QUENCHED
            and isinstance(self.env, IIDMixture)
            and self.path_seed is None
        ):
            raise ParameterError("quenched mode on a mixture needs a path_seed")
        max_support = max(
            law.max_support
            for law in (
                self.env.states if isinstance(self.env, IIDMixture) else self.env.laws
            )
        )
        if self.pop_cap * max_support >= _INT64_SAFE:
            raise ParameterError("pop_cap too large for exact int64 totals")

    def replica_seed(self, i: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(i,))


@dataclass
class TrajectoryBatch:
    """Simulated W_n trajectories plus per-rho weighted increment accumulators.

    w[i, n] is replica i's W_n for n = 0..n_max. a_hat[i, j, n] is
    A_hat_n(rho_j) = sum_{k<=n} rho_j^k (W_{k+1} - W_k) for n = 0..n_max-1
    (the last accumulator needs W_{n+1}, so the axis stops one short of w's).
    """

    mode: str
    n_max: int
    replicas: int
    master_seed: int
    pop_cap: int
    rho_grid: tuple[float, ...]
    w: np.ndarray
    a_hat: np.ndarray
    status: np.ndarray
    status_gen: np.ndarray
    path: EnvPath | None = None
    meta: dict = field(default_factory=dict)

    @property
    def uncapped(self) -> np.ndarray:
        return self.status != STATUS_CAPPED

    @property
    def capped_fraction(self) -> float:
        return float(np.mean(self.status == STATUS_CAPPED))

    @property
    def extinct_fraction(self) -> float:
        return float(np.mean(self.status == STATUS_EXTINCT))

    def status_label(self, i: int) -> str:
        code = int(self.status[i])
        if code == STATUS_EXTINCT:
            return f"extinct_at({int(self.status_gen[i])})"
        if code == STATUS_CAPPED:
            return f"capped_at({int(self.status_gen[i])})"
        return "completed"

    def rho_index(self, rho: float) -> int:
        for j, r in enumerate(self.rho_grid):
            if abs(r - rho) <= 1e-12:
                return j
        raise ParameterError(f"rho={rho} has no accumulator in grid {self.rho_grid}")

    def to_csv(self, path) -> None:
        """Long-format dump: one row per (replica, generation)."""
        with open(path, "w") as fh:
            fh.write("replica,n,W,status\n")
            for i in range(self.replicas):
                label = self.status_label(i)
                for n in range(self.n_max + 1):
                    fh.write(f"{i},{n},{float(self.w[i, n])!r},{label}\n")

    def save(self, path) -> None:
        """Versioned binary dump (npz)."""
        meta = {
            "format": _DUMP_FORMAT,
            "mode": self.mode,
            "n_max": self.n_max,
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "pop_cap": self.pop_cap,
            "rho_grid": list(self.rho_grid),
            "path_pmfs": [law.as_mapping() for law in self.path.laws] if self.path else None,
            "path_seed": self.path.seed if self.path else None,
        }
        np.savez_compressed(
            path,
            w=self.w,
            a_hat=self.a_hat,
            status=self.status,
            status_gen=self.status_gen,
            meta=np.array(json.dumps(meta)),
        )

    @classmethod
    def load(cls, path) -> "TrajectoryBatch":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != _DUMP_FORMAT:
            raise ParameterError(f"unsupported dump format {meta.get('format')!r}")
        env_path = None
        if meta["path_pmfs"] is not None:
            laws = [OffspringLaw({int(k): v for k, v in pmf.items()}) for pmf in meta["path_pmfs"]]
            env_path = EnvPath(laws, seed=meta["path_seed"])
        return cls(
            mode=meta["mode"],
            n_max=meta["n_max"],
            replicas=meta["replicas"],
            master_seed=meta["master_seed"],
            pop_cap=meta["pop_cap"],
            rho_grid=tuple(meta["rho_grid"]),
            w=data["w"],
            a_hat=data["a_hat"],
            status=data["status"],
            status_gen=data["status_gen"],
            path=env_path,
            meta=meta,
        )


def _simulate_rows(cfg: SimConfig, shared: EnvPath | None, lo: int, hi: int,
                   w: np.ndarray, status: np.ndarray, status_gen: np.ndarray,
                   a_hat: np.ndarray, rho_pows: np.ndarray) -> None:
    n_max = cfg.n_max
    pop_cap = cfg.pop_cap
    if shared is not None:
        shared_laws = shared.laws
        shared_pinv = np.exp(-shared.log_means)
    for i in range(lo, hi):
        rng = np.random.default_rng(cfg.replica_seed(i))
        if shared is not None:
            laws, pinv = shared_laws, shared_pinv
        else:
            path = cfg.env.sample_path(n_max, rng)
            laws, pinv = path.laws, np.exp(-path.log_means)
        row = w[i]
        row[0] = 1.0
        code, gen = STATUS_COMPLETED, -1
        z = 1
        for n in range(n_max):
            law = laws[n]
            counts = rng.multinomial(z, law.probs)
            z = int(counts @ law.values)
            row[n + 1] = z * pinv[n + 1]
            if z == 0:
                code, gen = STATUS_EXTINCT, n + 1
                row[n + 2 :] = 0.0
                break
            if z > pop_cap:
                code, gen = STATUS_CAPPED, n + 1
                row[n + 2 :] = row[n + 1]
                break
        status[i] = code
        status_gen[i] = gen
        if rho_pows.size:
            a_hat[i] = np.cumsum(rho_pows * np.diff(row)[None, :], axis=1)


def run(cfg: SimConfig, threads: int = 1) -> TrajectoryBatch:
    """Simulate the batch; same cfg gives bit-identical output at any thread count."""
    if threads < 1:
        raise ParameterError("threads must be >= 1")
    shared: EnvPath | None = None
    if cfg.mode == MODE_QUENCHED:
        if isinstance(cfg.env, FixedPath):
            shared = cfg.env.sample_path(cfg.n_max)
        else:
            rng = np.random.default_rng(np.random.SeedSequence(cfg.path_seed))
            shared = cfg.env.sample_path(cfg.n_max, rng)
            shared = EnvPath(shared.laws, seed=cfg.path_seed)

    replicas, n_max = cfg.replicas, cfg.n_max
    w = np.empty((replicas, n_max + 1))
    status = np.empty(replicas, dtype=np.int8)
    status_gen = np.empty(replicas, dtype=np.int32)
    a_hat = np.empty((replicas, len(cfg.rho_grid), n_max))
    rho_pows = np.array([[r**k for k in range(n_max)] for r in cfg.rho_grid])

    if threads == 1:
        _simulate_rows(cfg, shared, 0, replicas, w, status, status_gen, a_hat, rho_pows)
    else:
        bounds = np.linspace(0, replicas, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(
                    _simulate_rows, cfg, shared, int(lo), int(hi),
                    w, status, status_gen, a_hat, rho_pows,
                )
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            for f in futures:
                f.result()

    return TrajectoryBatch(
        mode=cfg.mode,
        n_max=n_max,
        replicas=replicas,
        master_seed=cfg.master_seed,
        pop_cap=cfg.pop_cap,
        rho_grid=tuple(cfg.rho_grid),
        w=w,
        a_hat=a_hat,
        status=status,
        status_gen=status_gen,
        path=shared,
    )


def increment_identity_check(
    batch: TrajectoryBatch, rho: float, n: int, w_proxy_index: int | None = None
) -> float:
    """Largest relative residual of the accumulator identity across replicas.

    With W replaced by the proxy W_N, A_n = sum_{k<=n} rho^k (W_N - W_k)
    must equal rho/(rho-1) A_hat_n + rho^{n+1}/(rho-1) (W_N - W_{n+1})
    - (W_N - 1)/(rho-1) exactly; both sides are evaluated from the stored
    trajectories and the residual is normalized by max(1, term magnitude).
    """
    n_idx = batch.n_max if w_proxy_index is None else w_proxy_index
    if rho <= 1.0:
        raise ParameterError("identity requires rho > 1")
    if not 0 <= n < n_idx - 1 or n_idx > batch.n_max:
        raise ParameterError(f"need 0 <= n < proxy-1 and proxy <= {batch.n_max}")
    w = batch.w
    w_proxy = w[:, n_idx]
    powers = rho ** np.arange(n + 1)
    lhs = (powers * (w_proxy[:, None] - w[:, : n + 1])).sum(axis=1)
    a_hat_n = (powers * (w[:, 1 : n + 2] - w[:, : n + 1])).sum(axis=1)
    rhs = (
        rho / (rho - 1.0) * a_hat_n
        + rho ** (n + 1) / (rho - 1.0) * (w_proxy - w[:, n + 1])
        - (w_proxy - 1.0) / (rho - 1.0)
    )
    scale = max(1.0, float(np.abs(lhs).max()), float(np.abs(rhs).max()))
    return float(np.abs(lhs - rhs).max() / scale)
