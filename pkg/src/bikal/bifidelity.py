"""Low-rank bi-fidelity surrogate: greedy point selection on cheap coarse
solves, a reconstruction basis of fine solves at the selected points, and
coefficient transfer from coarse to fine at prediction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .forward import ForwardModel
from .grids import Snapshot
from ._parallel import parallel_map

# Relative scale below which a distance counts as zero in the ratio metrics.
_ZERO_RTOL = 1e-12


@dataclass(frozen=True)
class SnapshotMatrix:
    """Row-stacked solution snapshots paired with their parameter points."""

    rows: np.ndarray
    param_points: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        pts = np.atleast_2d(np.asarray(self.param_points, dtype=float))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "param_points", pts)
        if rows.shape[0] < 1:
            raise ValueError("need at least one snapshot")
        if pts.shape[0] != rows.shape[0]:
            raise ValueError(f"{rows.shape[0]} snapshots but {pts.shape[0]} parameter points")


def _rows(V) -> np.ndarray:
    if isinstance(V, SnapshotMatrix):
        return V.rows
    return np.atleast_2d(np.asarray(V, dtype=float))


def _values(v) -> np.ndarray:
    if isinstance(v, Snapshot):
        return v.values
    return np.asarray(v, dtype=float)


def solve_gram(gram: np.ndarray, rhs: np.ndarray, jitter: float | None = None):
    """Solve a symmetric PSD Gram system, robust to near-singular matrices.

    Plain Cholesky first; on failure retries with a trace-scaled jitter.
    Two iterative-refinement sweeps recover accuracy on ill-conditioned
    systems. Returns (solution, jitter_used).
    """
    gram = np.asarray(gram, dtype=float)
    m = gram.shape[0]
    if jitter is None:
        jitter = 0.0
        regularized = gram
        try:
            cho = scipy.linalg.cho_factor(gram, lower=True)
        except scipy.linalg.LinAlgError:
            jitter = 1e-12 * np.trace(gram) / m
            regularized = gram + jitter * np.eye(m)
            try:
                cho = scipy.linalg.cho_factor(regularized, lower=True)
            except scipy.linalg.LinAlgError:
                x, *_ = scipy.linalg.lstsq(gram, rhs)
                return x, jitter
    else:
        regularized = gram + jitter * np.eye(m) if jitter else gram
        cho = scipy.linalg.cho_factor(regularized, lower=True)

    x = scipy.linalg.cho_solve(cho, rhs)
    for _ in range(2):
        x = x + scipy.linalg.cho_solve(cho, rhs - regularized @ x)
    return x, jitter


def gramian(V) -> np.ndarray:
    """Pairwise Euclidean inner products of the snapshot rows, symmetrized."""
    rows = _rows(V)
    gram = rows @ rows.T
    return 0.5 * (gram + gram.T)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of the greedy max-distance point selection.

    ``indices`` are original candidate indices in selection order.
    ``chol_factor`` holds the partial Cholesky rows in permuted candidate
    order (candidate t of the permutation, step j). ``step_distances[k]`` is
    the squared distance of every candidate (original order) to the span of
    the first k selected snapshots; already-selected candidates read 0.
    """

    indices: np.ndarray
    permutation: np.ndarray
    chol_factor: np.ndarray = field(repr=False)
    step_distances: np.ndarray = field(repr=False)
    truncated: bool = False

    @property
    def n_selected(self) -> int:
        return self.indices.size


def pivoted_cholesky_select(V, m: int, pivot_rtol: float = 1e-12) -> SelectionResult:
    """Greedy selection of snapshots by maximal distance to the selected span.

    Equivalent to a pivoted Cholesky factorization of the snapshot Gramian:
    at each step the candidate with the largest remaining squared distance is
    pivoted in (ties broken by lowest original index) and the distances of
    all others are deflated. Stops early with ``truncated=True`` once the
    best remaining pivot falls below ``pivot_rtol`` times the largest initial
    one, returning fewer than m indices.
    """
    rows = _rows(V)
    n_cand = rows.shape[0]
    if not 1 <= m <= n_cand:
        raise ValueError(f"basis size m={m} must be in [1, {n_cand}]")

    d = np.einsum("ij,ij->i", rows, rows)
    d0_max = float(d.max())
    if d0_max <= 0.0:
        raise ValueError("all snapshots are zero; nothing to select")

    perm = np.arange(n_cand)
    factor = np.zeros((n_cand, m))
    records = []
    truncated = False
    k = 0
    while k < m:
        rec = np.zeros(n_cand)
        rec[perm[k:]] = np.maximum(d[k:], 0.0)
        records.append(rec)

        seg = d[k:]
        best = float(seg.max())
        if best <= pivot_rtol * d0_max:
            truncated = True
            break
        tied = np.flatnonzero(seg == best) + k
        j = tied[np.argmin(perm[tied])]
        if j != k:
            perm[[k, j]] = perm[[j, k]]
            d[[k, j]] = d[[j, k]]
            factor[[k, j], :] = factor[[j, k], :]

        factor[k, k] = np.sqrt(d[k])
        if k + 1 < n_cand:
            r = rows[perm[k + 1:]] @ rows[perm[k]] - factor[k + 1:, :k] @ factor[k, :k]
            factor[k + 1:, k] = r / factor[k, k]
            d[k + 1:] -= factor[k + 1:, k] ** 2
        k += 1

    if not truncated:
        rec = np.zeros(n_cand)
        rec[perm[k:]] = np.maximum(d[k:], 0.0)
        records.append(rec)

    return SelectionResult(
        indices=perm[:k].copy(),
        permutation=perm,
        chol_factor=factor[:, :k],
        step_distances=np.asarray(records),
        truncated=truncated,
    )


def subspace_distance(v, basis) -> float:
    """Euclidean distance from a vector to the span of the basis rows."""
    vec = _values(v)
    rows = _rows(basis)
    if rows.shape[1] != vec.size:
        raise ValueError(f"vector length {vec.size} vs basis row length {rows.shape[1]}")
    coeff, _ = solve_gram(gramian(rows), rows @ vec)
    return float(np.linalg.norm(vec - coeff @ rows))


@dataclass(frozen=True)
class TrainingStep:
    """Diagnostics after the surrogate basis reached size k.

    The validation point is the next greedily selected candidate; its fine
    solve is afterwards absorbed into the basis, so no solve is wasted.
    """

    k: int
    validation_index: int
    max_lf_rel_dist: float
    lf_rel_dist: float
    hf_rel_dist: float
    r_s: float
    r_e: float
    bound: float


@dataclass
class BfModel:
    """Trained bi-fidelity surrogate.

    Holds the selected parameter points, the paired coarse/fine snapshot
    bases, the coarse-basis Gramian with its (possibly jittered) Cholesky
    factor, and the per-step training diagnostics.
    """

    selected_params: np.ndarray
    lf_basis: np.ndarray
    hf_basis: np.ndarray
    gramian_lf: np.ndarray
    steps: list[TrainingStep]
    truncated: bool
    lf_grid: object
    hf_grid: object
    jitter: float = 0.0
    _cho: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.lf_basis.shape[0] != self.hf_basis.shape[0]:
            raise ValueError("coarse and fine bases must have equal row counts")
        if self._cho is None:
            regularized = self.gramian_lf
            try:
                self._cho = (scipy.linalg.cho_factor(regularized, lower=True), 0.0)
            except scipy.linalg.LinAlgError:
                jitter = 1e-12 * np.trace(self.gramian_lf) / self.gramian_lf.shape[0]
                regularized = self.gramian_lf + jitter * np.eye(self.gramian_lf.shape[0])
                self._cho = (scipy.linalg.cho_factor(regularized, lower=True), jitter)
                self.jitter = jitter

    @property
    def n_basis(self) -> int:
        return self.lf_basis.shape[0]

    def final_bound(self) -> float:
        """Error estimate carried by the last recorded training step."""
        if not self.steps:
            return 0.0
        return self.steps[-1].bound


def _rel_dist(dist: float, norm: float) -> float:
    if norm <= 0.0:
        return 0.0
    return dist / norm


def model_similarity_rs(v_hf, v_lf, model: BfModel, k: int) -> float:
    """Ratio of fine to coarse relative subspace distances at basis size k.

    Close to 1 means the coarse model orders solution-space geometry like the
    fine one. Returns +inf when the coarse distance vanishes but the fine one
    does not; 1.0 when both vanish.
    """
    vh, vl = _values(v_hf), _values(v_lf)
    hf_rel = _rel_dist(subspace_distance(vh, model.hf_basis[:k]), np.linalg.norm(vh))
    lf_rel = _rel_dist(subspace_distance(vl, model.lf_basis[:k]), np.linalg.norm(vl))
    return _ratio_rs(hf_rel, lf_rel)


def _ratio_rs(hf_rel: float, lf_rel: float) -> float:
    if lf_rel <= _ZERO_RTOL:
        return 1.0 if hf_rel <= _ZERO_RTOL else np.inf
    return hf_rel / lf_rel


def error_ratio_re(v_hf, v_bf, model: BfModel, k: int) -> float:
    """In-plane reconstruction error over the out-of-plane distance at size k.

    Large values mean the coefficient transfer, not the missing basis
    directions, dominates the error, so adding fine solves stops paying off.
    """
    vh, vb = _values(v_hf), _values(v_bf)
    basis = model.hf_basis[:k]
    coeff, _ = solve_gram(gramian(basis), basis @ vh)
    projected = coeff @ basis
    num = float(np.linalg.norm(projected - vb))
    den = float(np.linalg.norm(vh - projected))
    return _ratio_re(num, den, np.linalg.norm(vh))


def _ratio_re(num: float, den: float, scale: float) -> float:
    tiny = _ZERO_RTOL * max(scale, 1.0)
    if den <= tiny:
        return 0.0 if num <= tiny else np.inf
    return num / den


def error_bound(model: BfModel, k: int) -> float:
    """A-priori relative-error estimate recorded at basis size k."""
    for step in model.steps:
        if step.k == k:
            return step.bound
    raise KeyError(f"no training diagnostics recorded at basis size k={k}")


def train_bf(
    lf: ForwardModel,
    hf: ForwardModel,
    candidates: np.ndarray,
    m_max: int,
    re_threshold: float = 10.0,
    plateau_window: int = 5,
    plateau_rtol: float = 0.01,
    threads: int = 1,
) -> BfModel:
    """Offline training of the bi-fidelity surrogate.

    Runs the coarse model on every candidate point, greedily selects up to
    ``m_max`` important points, and runs the fine model only there. After the
    basis reaches size k, the next selected candidate serves as validation
    point for the similarity ratio, the error-component ratio and the
    a-priori bound before its fine solve joins the basis. Training stops
    early when the error-component ratio reaches ``re_threshold`` or the
    bound stops improving (relative decrease below ``plateau_rtol`` over
    ``plateau_window`` consecutive values).
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if lf.param_dim != hf.param_dim:
        raise ValueError("coarse and fine models must share the parameter dimension")
    if m_max > candidates.shape[0]:
        raise ValueError(f"m_max={m_max} exceeds the {candidates.shape[0]} candidates")

    lf_snaps = np.asarray(
        [s.values for s in parallel_map(lf.evaluate, candidates, threads=threads)]
    )
    lf_norms = np.linalg.norm(lf_snaps, axis=1)

    selection = pivoted_cholesky_select(lf_snaps, m_max)
    sel = selection.indices

    def max_lf_rel(step_k: int) -> float:
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.sqrt(selection.step_distances[step_k]) / lf_norms
        return float(np.nanmax(np.where(lf_norms > 0, rel, 0.0)))

    hf_rows = [hf.evaluate(candidates[sel[0]]).values]
    steps: list[TrainingStep] = []
    bounds: list[float] = []
    for k in range(1, sel.size):
        val_idx = int(sel[k])
        v_lf = lf_snaps[val_idx]
        v_hf = hf.evaluate(candidates[val_idx]).values

        lf_basis_k = lf_snaps[sel[:k]]
        hf_basis_k = np.asarray(hf_rows)

        lf_rel = _rel_dist(
            float(np.sqrt(selection.step_distances[k][val_idx])), float(lf_norms[val_idx])
        )
        hf_norm = float(np.linalg.norm(v_hf))
        hf_rel = _rel_dist(subspace_distance(v_hf, hf_basis_k), hf_norm)
        r_s = _ratio_rs(hf_rel, lf_rel)

        coeff, _ = solve_gram(gramian(lf_basis_k), lf_basis_k @ v_lf)
        v_bf = coeff @ hf_basis_k
        proj_coeff, _ = solve_gram(gramian(hf_basis_k), hf_basis_k @ v_hf)
        projected = proj_coeff @ hf_basis_k
        r_e = _ratio_re(
            float(np.linalg.norm(projected - v_bf)),
            float(np.linalg.norm(v_hf - projected)),
            hf_norm,
        )
        bound = max_lf_rel(k) * (1.0 + r_e)

        steps.append(
            TrainingStep(
                k=k,
                validation_index=val_idx,
                max_lf_rel_dist=max_lf_rel(k),
                lf_rel_dist=lf_rel,
                hf_rel_dist=hf_rel,
                r_s=r_s,
                r_e=r_e,
                bound=bound,
            )
        )
        hf_rows.append(v_hf)

        if r_e >= re_threshold:
            break
        bounds.append(bound)
        if len(bounds) >= plateau_window:
            anchor = bounds[-plateau_window]
            if anchor <= 0.0 or (anchor - bounds[-1]) < plateau_rtol * anchor:
                break

    m_final = len(hf_rows)
    lf_basis = lf_snaps[sel[:m_final]]
    return BfModel(
        selected_params=candidates[sel[:m_final]].copy(),
        lf_basis=lf_basis,
        hf_basis=np.asarray(hf_rows),
        gramian_lf=gramian(lf_basis),
        steps=steps,
        truncated=selection.truncated or m_final < m_max,
        lf_grid=lf.grid,
        hf_grid=hf.grid,
    )


def bf_coefficients(model: BfModel, v_lf) -> np.ndarray:
    """Reconstruction coefficients projecting a coarse solve onto the coarse basis."""
    vec = _values(v_lf)
    if vec.size != model.lf_basis.shape[1]:
        raise ValueError(
            f"coarse snapshot length {vec.size} vs basis length {model.lf_basis.shape[1]}"
        )
    cho, _ = model._cho
    rhs = model.lf_basis @ vec
    regularized = model.gramian_lf
    if model.jitter:
        regularized = model.gramian_lf + model.jitter * np.eye(model.n_basis)
    coeff = scipy.linalg.cho_solve(cho, rhs)
    for _ in range(2):
        coeff = coeff + scipy.linalg.cho_solve(cho, rhs - regularized @ coeff)
    return coeff


def bf_predict(model: BfModel, z: np.ndarray, lf: ForwardModel) -> Snapshot:
    """Fine-grid prediction at z from one coarse solve and the trained bases."""
    coeff = bf_coefficients(model, lf.evaluate(z))
    return Snapshot(values=coeff @ model.hf_basis, grid=model.hf_grid)
