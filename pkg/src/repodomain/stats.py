"""Hypothesis tests, effect sizes, and the 2-D t-SNE projection of practice profiles."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateTable, EmptySample, NonFiniteInput, TooFewPoints
from .practices import PracticeProfile

EFFECT_THRESHOLDS = ((0.5, "large"), (0.3, "medium"), (0.1, "small"))


def effect_label(effect: float) -> str:
    """Kim's conventions: 0.1 small, 0.3 medium, 0.5 large."""
    e = abs(effect)
    for cut, label in EFFECT_THRESHOLDS:
        if e >= cut:
            return label
    return "negligible"


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p_value: float
    effect_size: float
    effect_label: str


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Row 1 is the focal group (yes, no); row 2 every other group (yes, no)."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("contingency cells must be nonnegative")
        if self.n < 1:
            raise ValueError("contingency table is empty")

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d

    def transpose(self) -> "ContingencyTable2x2":
        return ContingencyTable2x2(self.a, self.c, self.b, self.d)


def chi2_sf_df1(x: float) -> float:
    """Survival function of the chi-square distribution with one degree of freedom."""
    return math.erfc(math.sqrt(max(x, 0.0) / 2.0))


def chi_square_2x2(t: ContingencyTable2x2, continuity_correction: bool = True) -> StatResult:
    a, b, c, d, n = t.a, t.b, t.c, t.d, t.n
    margins = (a + b) * (c + d) * (a + c) * (b + d)
    if margins == 0:
        raise DegenerateTable(f"zero marginal in table {t}")
    diff = abs(a * d - b * c)
    if continuity_correction:
        diff = max(diff - n / 2.0, 0.0)
    stat = n * diff * diff / margins
    phi = math.sqrt(stat / n)
    return StatResult(stat, chi2_sf_df1(stat), phi, effect_label(phi))


# ---------------------------------------------------------------- Mann-Whitney


def _ranks_with_ties(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    tie_sizes = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(tie_sizes, dtype=np.float64)


@dataclass(frozen=True)
class MannWhitneyResult(StatResult):
    u: float = 0.0
    n1: int = 0
    n2: int = 0
    z: float = 0.0


def mann_whitney_u(x: Sequence[float], y: Sequence[float]) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U for ``x`` against ``y``.

    U counts pairs with x above y (ties count one half).  The p-value uses the
    normal approximation with tie-corrected variance and a 0.5 continuity
    correction; the effect size is the rank-biserial r = 1 - 2U/(n1 n2).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise EmptySample("Mann-Whitney U needs two nonempty samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("samples contain NaN or infinite values")
    ranks, ties = _ranks_with_ties(np.concatenate([x, y]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    mean = n1 * n2 / 2.0
    tie_term = float((ties**3 - ties).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        z, p = 0.0, 1.0
    else:
        z = max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var)
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
        z = math.copysign(z, u - mean)
    r = 1.0 - 2.0 * u / (n1 * n2)
    return MannWhitneyResult(u, p, r, effect_label(r), u=u, n1=n1, n2=n2, z=z)


# ---------------------------------------------------------------- t-SNE


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    learning_rate: float = 200.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iterations: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0 or self.learning_rate <= 0 or self.iterations < 1:
            raise ValueError("perplexity, learning_rate and iterations must be positive")
        if self.early_exaggeration < 1:
            raise ValueError("early_exaggeration must be at least 1")


@dataclass
class Embedding2D:
    points: np.ndarray
    final_kl: float
    perplexity: float
    flags: list[str] = field(default_factory=list)


def standardize(rows) -> tuple[np.ndarray, list[int]]:
    """Column z-scores (population sd); zero-variance columns become 0 and are reported."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("standardize expects a 2-D array")
    # differences from the first row cancel an exact translation bit-for-bit
    Z = X - X[0]
    centred = Z - Z.mean(axis=0)
    sd = np.sqrt((centred**2).mean(axis=0))
    constant = [j for j in range(X.shape[1]) if sd[j] == 0 or np.all(X[:, j] == X[0, j])]
    out = np.zeros_like(X)
    live = [j for j in range(X.shape[1]) if j not in constant]
    out[:, live] = centred[:, live] / sd[live]
    return out, constant


def _squared_distances(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return (diff * diff).sum(axis=2)


def _conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50):
    """Row-wise Gaussian affinities whose entropy matches log(perplexity)."""
    n = D.shape[0]
    P = np.zeros((n, n))
    target = math.log(perplexity)
    for i in range(n):
        d = np.delete(D[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_steps):
            w = np.exp(-(d - d.min()) * beta)
            s = w.sum()
            p = w / s
            entropy = math.log(s) + beta * float(((d - d.min()) * p).sum())
            gap = entropy - target
            if abs(gap) < tol:
                break
            if gap > 0:  # too flat: sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        P[i, np.arange(n) != i] = p
    return P


def tsne_project(rows, config: TsneConfig | None = None, standardize_input: bool = True) -> Embedding2D:
    """Exact t-SNE to two dimensions (O(N^2) memory and time per iteration)."""
    cfg = config or TsneConfig()
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("tsne_project expects a 2-D array")
    n = X.shape[0]
    if n < 4:
        raise TooFewPoints(f"t-SNE needs at least 4 points, got {n}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("t-SNE input contains NaN or infinite values")
    flags = []
    if standardize_input:
        X, constant = standardize(X)
        if constant:
            flags.append(f"zero-variance columns mapped to 0: {constant}")
    perplexity = min(cfg.perplexity, (n - 1) / 3.0)
    if perplexity < cfg.perplexity:
        flags.append(f"perplexity capped at {perplexity:.3f}")

    P = _conditional_affinities(_squared_distances(X), perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    rng = np.random.default_rng(cfg.seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(cfg.iterations):
        exaggeration = cfg.early_exaggeration if it < cfg.exaggeration_iterations else 1.0
        momentum = cfg.initial_momentum if it < cfg.momentum_switch else cfg.final_momentum
        num = 1.0 / (1.0 + _squared_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exaggeration * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

    num = 1.0 / (1.0 + _squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    kl = float((P * np.log(P / Q)).sum())
    return Embedding2D(Y, max(kl, 0.0), perplexity, flags)


# ---------------------------------------------------------------- domain report


@dataclass
class CountRow:
    domain: str
    yes: int
    no: int

    @property
    def total(self) -> int:
        return self.yes + self.no

    @property
    def yes_percent(self) -> float:
        return 100.0 * self.yes / self.total if self.total else 0.0

    @property
    def no_percent(self) -> float:
        return 100.0 * self.no / self.total if self.total else 0.0


@dataclass
class HypothesisRow:
    test: str
    domain_a: str
    domain_b: str
    result: StatResult


@dataclass
class DomainReport:
    adoption: list[CountRow]
    refactoring: list[CountRow]
    ownership_medians: dict[str, float]
    tests: list[HypothesisRow]
    flags: list[str] = field(default_factory=list)

    @staticmethod
    def _total(rows: Sequence[CountRow]) -> CountRow:
        return CountRow("Total", sum(r.yes for r in rows), sum(r.no for r in rows))

    def _count_csv(self, rows: Sequence[CountRow], yes: str, no: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["domain", yes, f"{yes}_percent", no, f"{no}_percent"])
        for r in [*rows, self._total(rows)]:
            w.writerow([r.domain, r.yes, repr(r.yes_percent), r.no, repr(r.no_percent)])
        return buf.getvalue()

    def adoption_csv(self) -> str:
        return self._count_csv(self.adoption, "adopted", "not_adopted")

    def refactoring_csv(self) -> str:
        return self._count_csv(self.refactoring, "refactoring", "not_refactoring")

    def ownership_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["domain", "median_ownership_ratio"])
        for d, m in self.ownership_medians.items():
            w.writerow([d, repr(m)])
        return buf.getvalue()

    def tests_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "domain_a", "domain_b", "statistic", "p", "effect", "label"])
        for t in self.tests:
            r = t.result
            w.writerow([t.test, t.domain_a, t.domain_b, repr(r.statistic), repr(r.p_value), repr(r.effect_size), r.effect_label])
        return buf.getvalue()

    def write(self, outdir: str | Path) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "adoption.csv").write_text(self.adoption_csv(), encoding="utf-8")
        (out / "refactoring.csv").write_text(self.refactoring_csv(), encoding="utf-8")
        (out / "ownership.csv").write_text(self.ownership_csv(), encoding="utf-8")
        (out / "tests.csv").write_text(self.tests_csv(), encoding="utf-8")

    def to_text(self) -> str:
        def table(title, rows, yes, no):
            lines = [title, f"{'Domain':<34}{yes:>16}{no:>20}"]
            for r in rows:
                lines.append(f"{r.domain:<34}{r.yes:>8} ({r.yes_percent:3.0f}%){r.no:>12} ({r.no_percent:3.0f}%)")
            t = self._total(rows)
            lines.append(f"{'Total':<34}{t.yes:>8} ({t.yes_percent:.1f}%){t.no:>11} ({t.no_percent:.1f}%)")
            return lines

        lines = table("Automation adoption", self.adoption, "Adopted", "Not adopted")
        lines += [""] + table("Refactoring commits", self.refactoring, "Refactoring", "Not refactoring")
        lines += ["", "Median ownership ratio"]
        lines += [f"  {d:<32}{m:.2f}" for d, m in self.ownership_medians.items()]
        lines += ["", f"{'test':<22}{'a':<28}{'b':<28}{'stat':>12}{'p':>9}{'effect':>8}  label"]
        for t in self.tests:
            r = t.result
            lines.append(
                f"{t.test:<22}{t.domain_a:<28}{t.domain_b:<28}{r.statistic:>12.3f}{r.p_value:>9.3f}{r.effect_size:>8.3f}  {r.effect_label}"
            )
        lines += [f"note: {f}" for f in self.flags]
        return "\n".join(lines)


def _one_vs_rest(rows: Sequence[CountRow], name: str, flags: list[str]) -> list[HypothesisRow]:
    out = []
    yes_total = sum(r.yes for r in rows)
    no_total = sum(r.no for r in rows)
    for r in rows:
        table = ContingencyTable2x2(r.yes, r.no, yes_total - r.yes, no_total - r.no)
        try:
            out.append(HypothesisRow(name, r.domain, "rest", chi_square_2x2(table)))
        except DegenerateTable as exc:
            flags.append(f"{name} for {r.domain} skipped: {exc}")
    return out


def domain_comparison_report(profiles: Mapping[str, Sequence[PracticeProfile]]) -> DomainReport:
    domains = sorted(d for d, ps in profiles.items() if ps)
    flags: list[str] = []
    adoption = [
        CountRow(d, sum(p.uses_automation for p in profiles[d]), sum(not p.uses_automation for p in profiles[d]))
        for d in domains
    ]
    refactoring = [
        CountRow(
            d,
            sum(p.refactoring_commits for p in profiles[d]),
            sum(p.non_refactoring_commits for p in profiles[d]),
        )
        for d in domains
    ]
    medians = {d: float(np.median([p.ownership_ratio for p in profiles[d]])) for d in domains}
    tests: list[HypothesisRow] = []
    if len(domains) < 2:
        flags.append("fewer than two domains: no pairwise or one-vs-rest tests")
    else:
        tests += _one_vs_rest(adoption, "chi2_adoption", flags)
        tests += _one_vs_rest(refactoring, "chi2_refactoring", flags)
        for a, b in itertools.combinations(domains, 2):
            res = mann_whitney_u(
                [p.ownership_ratio for p in profiles[a]], [p.ownership_ratio for p in profiles[b]]
            )
            tests.append(HypothesisRow("mann_whitney_ownership", a, b, res))
    return DomainReport(adoption, refactoring, medians, tests, flags)


def write_tsne_csv(refs: Sequence[str], domains: Sequence[str], points: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ref", "domain", "x", "y"])
        for ref, dom, (x, y) in zip(refs, domains, points):
            w.writerow([ref, dom, repr(float(x)), repr(float(y))])
