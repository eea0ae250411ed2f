"""Synthetic admission cohorts with a known set of outcome-informative codes.

Each patient carries a latent phenotype that tilts which leaf codes appear in
their admissions. Admissions are laid out in 90-day windows so that
``cohort.aggregate_windows`` recovers exactly the generator's windows. The
number of distinct codes per window follows a clipped negative binomial whose
mean is calibrated so the *aggregated* records average
``codes_per_record_mean`` codes. Each window carries a death event with
probability ``sigmoid(b0 + sum(effect_i * has_leaf_i))``; ``b0`` is found by
bisection on a pilot cohort so the record-level label rate hits the target.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import expit

from .cohort import MAX_CODES_PER_ADMISSION, AdmissionRecord, write_admissions, write_deaths
from .errors import CalibrationFailure
from .icd_tree import IcdTree

WINDOW_DAYS = 90
HORIZON_DAYS = 90


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 3250  # about 10,000 aggregated records
    n_phenotypes: int = 8
    codes_per_record_mean: float = 24.90
    codes_per_record_sd: float = 16.55
    target_record_mortality_rate: float = 0.06
    n_informative_codes: int = 20
    effect_sizes: tuple = (1.5,)
    windows_per_patient_mean: float = 3.4
    admissions_per_window_mean: float = 1.65
    phenotype_chapters: int = 2
    phenotype_boost: float = 6.0
    popularity_exponent: float = 1.1
    informative_pool: int = 120
    pilot_records: int = 50_000
    start_date: str = "2009-01-01"
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1 or self.n_phenotypes < 1:
            raise ValueError("n_patients and n_phenotypes must be positive")
        if not 0.0 < self.target_record_mortality_rate < 1.0:
            raise ValueError("target_record_mortality_rate must be in (0, 1)")
        if self.codes_per_record_mean <= 0 or self.codes_per_record_sd <= 0:
            raise ValueError("codes-per-record mean and sd must be positive")
        if self.codes_per_record_sd ** 2 <= self.codes_per_record_mean:
            raise ValueError("negative binomial needs variance > mean")
        if self.windows_per_patient_mean < 1 or self.admissions_per_window_mean < 1:
            raise ValueError("per-patient/per-window means must be >= 1")
        if self.n_informative_codes < 0:
            raise ValueError("n_informative_codes must be >= 0")
        if len(self.effect_sizes) not in (1, self.n_informative_codes) and self.n_informative_codes:
            raise ValueError("effect_sizes must have length 1 or n_informative_codes")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k not in known:
                raise KeyError(f"unknown synth option {k!r}")
            if k == "effect_sizes":
                v = tuple(float(x) for x in (v if isinstance(v, (list, tuple)) else [v]))
            kwargs[k] = v
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effect_sizes"] = list(self.effect_sizes)
        return d


@dataclass
class SynthCohort:
    admissions: list
    deaths: dict
    ground_truth: list
    intercept: float
    diagnostics: dict = field(default_factory=dict)

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "admissions": out / "admissions.csv",
            "deaths": out / "deaths.csv",
            "ground_truth": out / "ground_truth.txt",
        }
        write_admissions(paths["admissions"], self.admissions)
        write_deaths(paths["deaths"], self.deaths)
        paths["ground_truth"].write_text("".join(c + "\n" for c in self.ground_truth),
                                         encoding="utf-8")
        return paths


# ---------------------------------------------------------------------------
# model pieces
# ---------------------------------------------------------------------------


def _nb_dispersion(mean, sd):
    return mean ** 2 / (sd ** 2 - mean)


def _expected_clipped_nb(m, r, k_probs, n_leaves):
    """E[clip(NB(m, r), 1, min(25k, n_leaves))] mixed over admissions-per-window k."""
    p = r / (r + m)
    dist = stats.nbinom(r, p)
    total = 0.0
    for k, wk in enumerate(k_probs, start=1):
        if wk == 0:
            continue
        hi = min(MAX_CODES_PER_ADMISSION * k, n_leaves)
        x = np.arange(0, hi + 1)
        pmf = dist.pmf(x)
        ex = pmf[1:hi].dot(x[1:hi]) + pmf[0] * 1 + dist.sf(hi - 1) * hi
        total += wk * ex
    return total


def calibrate_count_mean(cfg: SynthConfig, n_leaves: int) -> tuple[float, float]:
    """Pre-clipping NB mean (and dispersion) whose clipped mean hits the target."""
    r = _nb_dispersion(cfg.codes_per_record_mean, cfg.codes_per_record_sd)
    lam = cfg.admissions_per_window_mean - 1.0
    kmax = 40
    k_probs = stats.poisson(lam).pmf(np.arange(kmax))
    k_probs = k_probs / k_probs.sum()
    target = cfg.codes_per_record_mean
    lo, hi = 1e-3, target * 20
    if _expected_clipped_nb(hi, r, k_probs, n_leaves) < target:
        raise CalibrationFailure(f"codes-per-record mean {target} unreachable under clipping")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _expected_clipped_nb(mid, r, k_probs, n_leaves) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), r


class _World:
    """Fixed structure shared by the pilot and the real cohort."""

    def __init__(self, tree: IcdTree, cfg: SynthConfig, rng):
        self.leaves = tree.leaves()
        n = len(self.leaves)
        if cfg.n_informative_codes > n:
            raise ValueError(f"n_informative_codes={cfg.n_informative_codes} exceeds {n} leaves")
        chapter_of = np.array([tree.ancestors(c)[-1] if tree.ancestors(c) else c
                               for c in self.leaves])
        chapters = sorted(set(chapter_of))

        rank = rng.permutation(n)
        pop = 1.0 / (rank + 10.0) ** cfg.popularity_exponent
        self.log_weights = np.empty((cfg.n_phenotypes, n))
        for p in range(cfg.n_phenotypes):
            chosen = rng.choice(len(chapters), size=min(cfg.phenotype_chapters, len(chapters)),
                                replace=False)
            boost = np.isin(chapter_of, [chapters[i] for i in chosen])
            w = pop * np.where(boost, cfg.phenotype_boost, 1.0)
            self.log_weights[p] = np.log(w / w.sum())
        self.phenotype_probs = rng.dirichlet(np.full(cfg.n_phenotypes, 5.0))

        # informative leaves drawn from the most frequent ones so they are observable
        marginal = np.exp(self.log_weights).T @ self.phenotype_probs
        pool = np.argsort(-marginal, kind="stable")[: max(cfg.informative_pool, cfg.n_informative_codes)]
        self.informative = np.sort(rng.choice(pool, size=cfg.n_informative_codes, replace=False))
        eff = np.asarray(cfg.effect_sizes, dtype=float)
        if cfg.n_informative_codes:
            eff = np.broadcast_to(eff, (cfg.n_informative_codes,)).copy() if eff.size == 1 else eff
        self.effects = np.zeros(n)
        self.effects[self.informative] = eff if cfg.n_informative_codes else 0.0

        self.count_mean, self.count_r = calibrate_count_mean(cfg, n)


def _draw_patient(world: _World, cfg: SynthConfig, rng):
    """Windows for one patient: list of (per-admission leaf index arrays, eta)."""
    n_leaves = len(world.leaves)
    phen = rng.choice(cfg.n_phenotypes, p=world.phenotype_probs)
    n_windows = 1 + rng.poisson(cfg.windows_per_patient_mean - 1.0)
    p_nb = world.count_r / (world.count_r + world.count_mean)
    windows = []
    for _ in range(n_windows):
        k = 1 + rng.poisson(cfg.admissions_per_window_mean - 1.0)
        c = int(rng.negative_binomial(world.count_r, p_nb))
        c = min(max(c, 1), MAX_CODES_PER_ADMISSION * k, n_leaves)
        k = min(k, c)
        # weighted sampling without replacement (Gumbel top-k)
        keys = world.log_weights[phen] + rng.gumbel(size=n_leaves)
        codes = np.argpartition(-keys, c - 1)[:c] if c < n_leaves else np.arange(n_leaves)
        codes = codes[np.argsort(-keys[codes], kind="stable")]
        counts = np.ones(k, dtype=int) + rng.multinomial(c - k, np.full(k, 1.0 / k))
        over = counts - MAX_CODES_PER_ADMISSION
        while (over > 0).any():
            i = int(np.argmax(over))
            j = int(np.argmin(counts))
            counts[i] -= 1
            counts[j] += 1
            over = counts - MAX_CODES_PER_ADMISSION
        parts = np.split(codes, np.cumsum(counts)[:-1])
        eta = float(world.effects[codes].sum())
        windows.append((parts, eta))
    return windows


def _first_event(u, p, offsets):
    """Per patient, index of first window where u < p (or -1)."""
    hit = u < p
    out = np.full(len(offsets) - 1, -1)
    for i in range(len(offsets) - 1):
        h = np.flatnonzero(hit[offsets[i]:offsets[i + 1]])
        if h.size:
            out[i] = h[0]
    return out


def calibrate_intercept(etas, uniforms, offsets, target, lo=-30.0, hi=15.0, iters=80):
    """Bisection on b0 so (deaths / kept windows) equals ``target``.

    Uses common random numbers: the same uniforms for every b0, which makes
    the realized rate monotone in b0.
    """
    sizes = np.diff(offsets)

    def rate(b0):
        first = _first_event(uniforms, expit(b0 + etas), offsets)
        died = first >= 0
        kept = np.where(died, first + 1, sizes).sum()
        return died.sum() / kept

    if not rate(lo) <= target <= rate(hi):
        raise CalibrationFailure(
            f"target rate {target} outside [{rate(lo):.4f}, {rate(hi):.4f}] over b0 in [{lo}, {hi}]"
        )
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_cohort(tree: IcdTree, cfg: SynthConfig = SynthConfig()) -> SynthCohort:
    """Draw admissions, deaths and the ground-truth informative leaf codes.

    Returns a ``SynthCohort``; ``ground_truth`` lists informative leaves in
    tree order. Fully determined by ``cfg.seed``.
    """
    ss = np.random.SeedSequence(cfg.seed)
    s_world, s_pilot, s_cohort = ss.spawn(3)
    world = _World(tree, cfg, np.random.default_rng(s_world))

    # pilot for intercept calibration
    prng = np.random.default_rng(s_pilot)
    etas, offsets = [], [0]
    while offsets[-1] < cfg.pilot_records:
        ws = _draw_patient(world, cfg, prng)
        etas.extend(eta for _, eta in ws)
        offsets.append(offsets[-1] + len(ws))
    etas = np.asarray(etas)
    pilot_u = prng.random(len(etas))
    b0 = calibrate_intercept(etas, pilot_u, np.asarray(offsets), cfg.target_record_mortality_rate)

    rng = np.random.default_rng(s_cohort)
    start = dt.date.fromisoformat(cfg.start_date)
    admissions: list[AdmissionRecord] = []
    deaths: dict[str, dt.date] = {}
    n_windows = n_deaths = 0
    sizes = []
    width = len(str(cfg.n_patients))
    for i in range(cfg.n_patients):
        pid = f"P{i + 1:0{width}d}"
        ws = _draw_patient(world, cfg, rng)
        day = start + dt.timedelta(days=int(rng.integers(0, 3650)))
        for parts, eta in ws:
            k = len(parts)
            offs = np.sort(np.concatenate([[0], rng.integers(0, WINDOW_DAYS, size=k - 1)]))
            last_dis = day
            for off, codes in zip(offs, parts):
                admit = day + dt.timedelta(days=int(off))
                dis = admit + dt.timedelta(days=int(1 + rng.poisson(4)))
                last_dis = max(last_dis, dis)
                admissions.append(AdmissionRecord(
                    pid, admit, dis, tuple(world.leaves[j] for j in codes)))
            n_windows += 1
            sizes.append(sum(len(p) for p in parts))
            if rng.random() < expit(b0 + eta):
                deaths[pid] = last_dis + dt.timedelta(days=int(rng.integers(0, HORIZON_DAYS + 1)))
                n_deaths += 1
                break
            # next window strictly after both the 90-day span and the label horizon
            gap = int(rng.integers(0, 365))
            day = max(day + dt.timedelta(days=WINDOW_DAYS),
                      last_dis + dt.timedelta(days=HORIZON_DAYS + 1)) + dt.timedelta(days=gap)

    gt = [world.leaves[j] for j in world.informative]
    return SynthCohort(
        admissions=admissions,
        deaths=deaths,
        ground_truth=gt,
        intercept=b0,
        diagnostics={
            "n_records": n_windows,
            "n_admissions": len(admissions),
            "record_label_rate": n_deaths / max(n_windows, 1),
            "codes_per_record_mean": float(np.mean(sizes)) if sizes else 0.0,
            "codes_per_record_sd": float(np.std(sizes)) if sizes else 0.0,
            "nb_mean": world.count_mean,
            "nb_dispersion": world.count_r,
            "intercept": b0,
        },
    )
