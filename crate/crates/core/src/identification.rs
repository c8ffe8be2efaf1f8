//! Closed-form recovery of the present-bias and discount factors from CCPs
//! and transitions, plus utility recovery from terminal-period CCPs.
//!
//! Notation: `n = J - 1`. For a pair `(k, l, x1, x2)` asserting
//! `u_k(x1) = u_l(x2)`, the log CCP ratio `D_t` is linear in the differenced
//! next-period values, which lets the value recursion be written as
//!
//! ```text
//! [I, c1 I, c2 I] A = B,   c1 = (1 - beta) / beta,   c2 = -1 / (beta delta)
//! ```
//!
//! with one column of `A` and `B` per period `t = 3..T`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::model::{logsumexp, solve_backward_in, EqualityPair, ModelSpec, ValueSolution};
use crate::numeric::{QuadDouble, Mat, Real};
use crate::simulation::{empirical_ccps, estimate_transitions, PanelData};

/// How `(c1, c2)` are read off the system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// Right inverse `B A^+`, scalars taken as diagonal means of blocks 2 and 3.
    #[default]
    PaperRightInverse,
    /// Two-unknown least squares with the scalar-identity structure imposed.
    ConstrainedLs,
}

/// Transition matrices derived from the equality pairs.
#[derive(Clone, Debug)]
pub struct PairSystem<R> {
    pub pairs: Vec<EqualityPair>,
    pub num_states: usize,
    pub num_actions: usize,
    /// Row `j` is `F_k(x1) - F_l(x2)` for pair `j`.
    pub f_tilde: Mat<R>,
    /// Row `x` is `F_K(x) - F_K(J)`.
    pub f_tilde_k: Mat<R>,
    /// Per-action blocks `[f(x'|x,i)]` for `x, x' < J`, stacked vertically.
    pub f_stack: Mat<R>,
    /// Per-action blocks with every row equal to `F_i(J)`.
    pub f_j_stack: Mat<R>,
    /// Left inverse of `f_tilde` (the ordinary inverse when square).
    pub f_tilde_pinv: Mat<R>,
    /// Singular values of `f_tilde`, descending.
    pub singular_values: Vec<R>,
}

/// First `J - 1` entries of a transition row.
fn truncated_row<R: Real>(transitions: &[Vec<Vec<R>>], i: usize, x: usize) -> Vec<R> {
    let row = &transitions[i][x];
    row[..row.len() - 1].to_vec()
}

fn check_transition_shape<R>(transitions: &[Vec<Vec<R>>]) -> Result<(usize, usize)> {
    let k = transitions.len();
    let j = transitions.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(Error::invalid("at least two actions are required"));
    }
    if j < 2 {
        return Err(Error::invalid("identification needs at least two states"));
    }
    if transitions.iter().any(|m| m.len() != j || m.iter().any(|r| r.len() != j)) {
        return Err(Error::invalid(format!("transitions must be {k} x {j} x {j}")));
    }
    Ok((j, k))
}

/// Relative rank of a matrix from its singular values.
fn relative_rank<R: Real>(singular_values: &[R], rank_tol: f64) -> usize {
    let largest = singular_values.first().copied().unwrap_or_else(R::zero);
    if !(largest > R::zero()) {
        return 0;
    }
    let cutoff = largest * R::from_f64(rank_tol);
    singular_values.iter().filter(|&&s| s > cutoff).count()
}

/// Builds the pair matrices and checks that `F~` has full column rank.
pub fn build_pair_system<R: Real>(
    transitions: &[Vec<Vec<R>>],
    pairs: &[EqualityPair],
    rank_tol: f64,
) -> Result<PairSystem<R>> {
    let (j, k) = check_transition_shape(transitions)?;
    let n = j - 1;
    if pairs.len() < n {
        return Err(Error::invalid(format!(
            "{} pairs supplied, at least {n} required",
            pairs.len()
        )));
    }
    for p in pairs {
        if p.k >= k || p.l >= k || p.x1 >= j || p.x2 >= j {
            return Err(Error::invalid(format!("pair {p:?} out of range")));
        }
    }
    let f_tilde = Mat::from_rows(
        &pairs
            .iter()
            .map(|p| {
                let a = truncated_row(transitions, p.k, p.x1);
                let b = truncated_row(transitions, p.l, p.x2);
                a.iter().zip(&b).map(|(&x, &y)| x - y).collect()
            })
            .collect::<Vec<Vec<R>>>(),
    );
    let reference_row = truncated_row(transitions, k - 1, j - 1);
    let f_tilde_k = Mat::from_fn(n, n, |x, c| transitions[k - 1][x][c] - reference_row[c]);
    let f_stack = Mat::from_fn(n * k, n, |r, c| transitions[r / n][r % n][c]);
    let f_j_stack = Mat::from_fn(n * k, n, |r, c| transitions[r / n][j - 1][c]);

    let singular_values = f_tilde.singular_values();
    let rank = relative_rank(&singular_values, rank_tol);
    if rank < n {
        return Err(Error::violation(
            Assumption::PairRank,
            format!(
                "pair transition-difference matrix has rank {rank} < {n} (smallest singular value {:e})",
                singular_values.last().map_or(0.0, |s| s.to_f64())
            ),
        ));
    }
    let qr = f_tilde.qr();
    let mut f_tilde_pinv = Mat::zeros(n, pairs.len());
    for col in 0..pairs.len() {
        let mut e = vec![R::zero(); pairs.len()];
        e[col] = R::one();
        let x = qr.solve_least_squares(&e).ok_or_else(|| {
            Error::violation(Assumption::PairRank, "pair transition-difference matrix is singular")
        })?;
        for (r, v) in x.into_iter().enumerate() {
            f_tilde_pinv[(r, col)] = v;
        }
    }
    Ok(PairSystem {
        pairs: pairs.to_vec(),
        num_states: j,
        num_actions: k,
        f_tilde,
        f_tilde_k,
        f_stack,
        f_j_stack,
        f_tilde_pinv,
        singular_values,
    })
}

/// CCP matrices for a single period.
#[derive(Clone, Debug)]
pub struct CcpBlocks<R> {
    /// `[diag P_1(x<J), ..., diag P_K(x<J)]`, `n x nK`.
    pub p_t: Mat<R>,
    /// `[P_1(J) I, ..., P_K(J) I]`, `n x nK`.
    pub p_tj: Mat<R>,
    /// Log CCP ratio per pair.
    pub d_t: Vec<R>,
}

fn check_ccps<R: Real>(ccps: &[Vec<Vec<R>>], j: usize, k: usize) -> Result<()> {
    for (t, period) in ccps.iter().enumerate() {
        if period.len() != k || period.iter().any(|r| r.len() != j) {
            return Err(Error::invalid(format!("CCPs at period {t} must be {k} x {j}")));
        }
        if period.iter().flatten().any(|&p| !(p > R::zero()) || !p.is_finite()) {
            return Err(Error::invalid(format!(
                "CCPs at period {t} must be strictly positive"
            )));
        }
    }
    Ok(())
}

/// CCP block matrices and the log-ratio vector for period index `t`.
pub fn build_ccp_blocks<R: Real>(
    ccps: &[Vec<Vec<R>>],
    pair_system: &PairSystem<R>,
    t: usize,
) -> Result<CcpBlocks<R>> {
    let (j, k) = (pair_system.num_states, pair_system.num_actions);
    let period = ccps
        .get(t)
        .ok_or_else(|| Error::invalid(format!("period index {t} out of range")))?;
    check_ccps(std::slice::from_ref(period), j, k)?;
    let n = j - 1;
    let mut p_t = Mat::zeros(n, n * k);
    let mut p_tj = Mat::zeros(n, n * k);
    for i in 0..k {
        for x in 0..n {
            p_t[(x, i * n + x)] = period[i][x];
            p_tj[(x, i * n + x)] = period[i][j - 1];
        }
    }
    let d_t = pair_system
        .pairs
        .iter()
        .map(|p| period[p.k][p.x1].ln() - period[p.l][p.x2].ln())
        .collect();
    Ok(CcpBlocks { p_t, p_tj, d_t })
}

/// The stacked system `[I, c1 I, c2 I] A = B`.
#[derive(Clone, Debug)]
pub struct LinearSystem<R> {
    pub a: Mat<R>,
    pub b: Mat<R>,
}

/// Per-period ingredients: `F~^+ D_t`, `G_t F~^+ D_t` and the reference log-CCP gap.
struct PeriodTerms<R> {
    fd: Vec<R>,
    gfd: Vec<R>,
    log_ref_gap: Vec<R>,
}

fn period_terms<R: Real>(ccps: &[Vec<Vec<R>>], ps: &PairSystem<R>) -> Result<Vec<PeriodTerms<R>>> {
    let j = ps.num_states;
    let k = ps.num_actions;
    (0..ccps.len())
        .map(|t| {
            let blocks = build_ccp_blocks(ccps, ps, t)?;
            let fd = ps.f_tilde_pinv.mul_vec(&blocks.d_t);
            let g = blocks
                .p_t
                .matmul(&ps.f_stack)
                .sub(&blocks.p_tj.matmul(&ps.f_j_stack));
            let gfd = g.mul_vec(&fd);
            let reference = &ccps[t][k - 1];
            let log_ref_gap = (0..j - 1)
                .map(|x| reference[x].ln() - reference[j - 1].ln())
                .collect();
            Ok(PeriodTerms { fd, gfd, log_ref_gap })
        })
        .collect()
}

fn diff<R: Real>(a: &[R], b: &[R]) -> Vec<R> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Stacks one column of `A` and `B` per period `t = 3..T` (1-based).
pub fn assemble_system<R: Real>(ccps: &[Vec<Vec<R>>], pair_system: &PairSystem<R>) -> Result<LinearSystem<R>> {
    let horizon = ccps.len();
    if horizon < 4 {
        return Err(Error::InsufficientData {
            assumption: None,
            detail: format!("horizon {horizon} < 4 leaves no usable period differences"),
        });
    }
    check_ccps(ccps, pair_system.num_states, pair_system.num_actions)?;
    let n = pair_system.num_states - 1;
    let terms = period_terms(ccps, pair_system)?;
    let cols = horizon - 2;
    let mut a = Mat::zeros(3 * n, cols);
    let mut b = Mat::zeros(n, cols);
    // 0-based period s = t - 1 runs over 2..horizon
    for (c, s) in (2..horizon).enumerate() {
        let d_fd = diff(&terms[s].fd, &terms[s - 1].fd);
        let d_fd_prev = diff(&terms[s - 1].fd, &terms[s - 2].fd);
        let top = pair_system.f_tilde_k.mul_vec(&d_fd);
        let phi = diff(&terms[s].gfd, &terms[s - 1].gfd);
        let rhs = diff(&terms[s].log_ref_gap, &terms[s - 1].log_ref_gap);
        for r in 0..n {
            a[(r, c)] = top[r];
            a[(n + r, c)] = phi[r];
            a[(2 * n + r, c)] = d_fd_prev[r];
            b[(r, c)] = rhs[r];
        }
    }
    Ok(LinearSystem { a, b })
}

/// Checks that `h` is square and row-stochastic, `h[w][w'] = h(w' | w)`.
pub fn validate_macro_transition(h: &[Vec<f64>]) -> Result<()> {
    let m = h.len();
    if m == 0 || h.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("macro transition matrix must be square and non-empty"));
    }
    for (w, row) in h.iter().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!("macro transition row {w} has a negative entry")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > crate::model::STOCHASTIC_TOL {
            return Err(Error::invalid(format!("macro transition row {w} sums to {total}")));
        }
    }
    Ok(())
}

/// Macro-state system with `M` columns per period.
///
/// `h[w][w'] = h(w' | w)` is row-stochastic. The system post-multiplies by
/// the matrix whose column `w` is `h(. | w)`, i.e. by `h` transposed. CCPs
/// must not depend on the macro state, so each period vector is first
/// broadcast across the `M` macro columns.
pub fn assemble_system_macro<R: Real>(
    ccps: &[Vec<Vec<R>>],
    pair_system: &PairSystem<R>,
    h: &[Vec<f64>],
) -> Result<LinearSystem<R>> {
    validate_macro_transition(h)?;
    let base = assemble_system(ccps, pair_system)?;
    let m = h.len();
    let n = pair_system.num_states - 1;
    let periods = base.a.cols();
    // column w of the post-multiplier is h(. | w); broadcasting a vector v
    // across M columns and multiplying gives v * (sum_w' h(w'|w)) per column
    // rows are renormalised in R so each weight is one to working precision
    let weight: Vec<R> = (0..m)
        .map(|w| {
            let row: Vec<R> = h[w].iter().map(|&p| R::from_f64(p)).collect();
            let total: R = row.iter().copied().sum();
            row.into_iter().map(|p| p / total).sum()
        })
        .collect();
    let mut a = Mat::zeros(3 * n, periods * m);
    let mut b = Mat::zeros(n, periods * m);
    for c in 0..periods {
        for (w, &scale) in weight.iter().enumerate() {
            let col = c * m + w;
            for r in 0..2 * n {
                a[(r, col)] = base.a[(r, c)] * scale;
            }
            for r in 2 * n..3 * n {
                a[(r, col)] = base.a[(r, c)];
            }
            for r in 0..n {
                b[(r, col)] = base.b[(r, c)] * scale;
            }
        }
    }
    Ok(LinearSystem { a, b })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `||block1 - I||_F` of the right-inverse coefficient matrix.
    pub block1_residual: f64,
    pub block2_offdiag_max: f64,
    pub block3_offdiag_max: f64,
    /// `max |[I, c1 I, c2 I] A - B|` at the reported scalars.
    pub system_residual: f64,
    /// `(s_max / s_min)^2` of `A`, the condition number of `A A^T`.
    pub cond_aat: f64,
    /// Singular values of `A` after scaling each column to unit norm.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank_tol: f64,
}

/// Recovered utilities. Levels are `None` for states not connected to the
/// anchor through the equality pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityRecovery {
    /// `u_i(x) - u_K(x)`, always identified.
    pub differences: Vec<Vec<f64>>,
    pub levels: Vec<Vec<Option<f64>>>,
    pub level_identified: Vec<bool>,
    /// Largest disagreement met when a state is reached along two paths.
    pub cycle_discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub beta_hat: f64,
    pub delta_hat: f64,
    pub c1: f64,
    pub c2: f64,
    pub mode: SolveMode,
    /// `beta_hat` in (0, 1] and `delta_hat` in (0, 1).
    pub valid: bool,
    pub warnings: Vec<String>,
    pub coefficient_matrix: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub utilities_hat: Option<UtilityRecovery>,
    /// Largest |logsumexp W(x1) - logsumexp W(x2)| over periods and pairs,
    /// when the forward model is available.
    pub inclusive_value_gap: Option<f64>,
    pub smoothing: Option<SmoothingReport>,
}

/// Cells adjusted before taking logs of empirical CCPs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    /// Visited `(t, x)` cells with at least one zero action count.
    pub smoothed_cells: usize,
    /// Unvisited `(t, x)` cells filled with uniform CCPs.
    pub unvisited_cells: usize,
    /// Unvisited `(x, i)` transition rows filled uniform.
    pub unvisited_transition_rows: usize,
}

/// Which assumption labels a solve reports against.
#[derive(Clone, Copy)]
struct Labels {
    length: Assumption,
    rank: Assumption,
}

const BASE_LABELS: Labels = Labels {
    length: Assumption::PanelLength,
    rank: Assumption::SystemRank,
};

const MACRO_LABELS: Labels = Labels {
    length: Assumption::MacroPanelLength,
    rank: Assumption::MacroSystemRank,
};

/// Solves for `(c1, c2)` and converts to `(beta, delta)`.
pub fn solve_discounts<R: Real>(system: &LinearSystem<R>, rank_tol: f64, mode: SolveMode) -> Result<IdentificationResult> {
    solve_labelled(system, rank_tol, mode, BASE_LABELS)
}

/// As [`solve_discounts`], reporting against the macro-state assumptions.
pub fn solve_discounts_macro<R: Real>(
    system: &LinearSystem<R>,
    rank_tol: f64,
    mode: SolveMode,
) -> Result<IdentificationResult> {
    solve_labelled(system, rank_tol, mode, MACRO_LABELS)
}

fn solve_labelled<R: Real>(
    system: &LinearSystem<R>,
    rank_tol: f64,
    mode: SolveMode,
    labels: Labels,
) -> Result<IdentificationResult> {
    let (a, b) = (&system.a, &system.b);
    let rows = a.rows();
    let cols = a.cols();
    if rows == 0 || rows % 3 != 0 || b.rows() * 3 != rows || b.cols() != cols {
        return Err(Error::invalid(format!(
            "system shapes A {}x{} and B {}x{} are inconsistent",
            rows,
            cols,
            b.rows(),
            b.cols()
        )));
    }
    let n = rows / 3;
    if cols < rows {
        return Err(Error::InsufficientData {
            assumption: Some(labels.length),
            detail: format!("{cols} system columns < {rows} rows"),
        });
    }
    let scaled_sv = a.normalize_columns().singular_values();
    let rank = relative_rank(&scaled_sv, rank_tol);
    if rank < rows {
        return Err(Error::violation(
            labels.rank,
            format!(
                "system matrix has rank {rank} < {rows} (relative smallest singular value {:e})",
                scaled_sv
                    .last()
                    .map_or(0.0, |s| (*s / scaled_sv[0]).to_f64())
            ),
        ));
    }
    let raw_sv = a.singular_values();
    let cond = {
        let ratio = raw_sv[0] / raw_sv[rows - 1];
        (ratio * ratio).to_f64()
    };

    let coefficients = right_inverse_coefficients(a, b).ok_or_else(|| {
        Error::violation(labels.rank, "system matrix is numerically singular")
    })?;
    let diag_mean = |offset: usize| {
        let total: R = (0..n).map(|r| coefficients[(r, offset + r)]).sum();
        total / R::from_f64(n as f64)
    };
    let offdiag_max = |offset: usize| {
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    worst = worst.max(coefficients[(r, offset + c)].abs().to_f64());
                }
            }
        }
        worst
    };
    let block1_residual = {
        let mut total = R::zero();
        for r in 0..n {
            for c in 0..n {
                let target = if r == c { R::one() } else { R::zero() };
                let d = coefficients[(r, c)] - target;
                total += d * d;
            }
        }
        total.sqrt().to_f64()
    };

    let (c1, c2) = match mode {
        SolveMode::PaperRightInverse => (diag_mean(n), diag_mean(2 * n)),
        SolveMode::ConstrainedLs => constrained_scalars(a, b).ok_or_else(|| {
            Error::violation(labels.rank, "constrained least squares is degenerate")
        })?,
    };
    let system_residual = {
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..cols {
                let lhs = a[(r, c)] + c1 * a[(n + r, c)] + c2 * a[(2 * n + r, c)];
                worst = worst.max((lhs - b[(r, c)]).abs().to_f64());
            }
        }
        worst
    };
    let beta = R::one() / (R::one() + c1);
    let delta = -R::one() / (beta * c2);
    let (beta_hat, delta_hat) = (beta.to_f64(), delta.to_f64());
    let mut warnings = Vec::new();
    let beta_ok = beta_hat > 0.0 && beta_hat <= 1.0 + 1e-12;
    let delta_ok = delta_hat > 0.0 && delta_hat < 1.0;
    if !beta_ok {
        warnings.push(format!("beta_hat = {beta_hat} outside (0, 1]"));
    }
    if !delta_ok {
        warnings.push(format!("delta_hat = {delta_hat} outside (0, 1)"));
    }
    Ok(IdentificationResult {
        beta_hat,
        delta_hat,
        c1: c1.to_f64(),
        c2: c2.to_f64(),
        mode,
        valid: beta_ok && delta_ok,
        warnings,
        coefficient_matrix: coefficients.to_f64_rows(),
        diagnostics: Diagnostics {
            block1_residual,
            block2_offdiag_max: offdiag_max(n),
            block3_offdiag_max: offdiag_max(2 * n),
            system_residual,
            cond_aat: cond,
            singular_values: scaled_sv.iter().map(|s| s.to_f64()).collect(),
            rank,
            rows,
            cols,
            rank_tol,
        },
        utilities_hat: None,
        inclusive_value_gap: None,
        smoothing: None,
    })
}

/// `B A^+` with `A^+ = A^T (A A^T)^{-1}`, computed as `Q R^{-T}` from
/// `A^T = Q R`.
fn right_inverse_coefficients<R: Real>(a: &Mat<R>, b: &Mat<R>) -> Option<Mat<R>> {
    let qr = a.transpose().qr();
    let q = qr.q_thin();
    let y = b.matmul(&q);
    let r = qr.r();
    let rows = a.rows();
    // C R^T = Y, so each row of C solves R c = y
    let mut c = Mat::zeros(b.rows(), rows);
    for i in 0..b.rows() {
        let x = crate::numeric::solve_upper(r, y.row(i))?;
        for (j, v) in x.into_iter().enumerate() {
            c[(i, j)] = v;
        }
    }
    Some(c)
}

/// Least squares over `(c1, c2)` of `c1 A2 + c2 A3 = B - A1`.
fn constrained_scalars<R: Real>(a: &Mat<R>, b: &Mat<R>) -> Option<(R, R)> {
    let n = b.rows();
    let cols = b.cols();
    let mut design = Mat::zeros(n * cols, 2);
    let mut target = Vec::with_capacity(n * cols);
    for r in 0..n {
        for c in 0..cols {
            let row = r * cols + c;
            design[(row, 0)] = a[(n + r, c)];
            design[(row, 1)] = a[(2 * n + r, c)];
            target.push(b[(r, c)] - a[(r, c)]);
        }
    }
    let sol = design.qr().solve_least_squares(&target)?;
    Some((sol[0], sol[1]))
}

/// A known utility level `u_action(state) = value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub action: usize,
    pub state: usize,
    pub value: f64,
}

/// Utilities from terminal CCPs, where the continuation value is zero.
///
/// Within-state differences come straight from log CCP ratios; levels are
/// propagated from the anchor along the equality pairs.
pub fn recover_utilities<R: Real>(
    terminal_ccps: &[Vec<R>],
    pairs: &[EqualityPair],
    anchor: Anchor,
) -> Result<UtilityRecovery> {
    let k = terminal_ccps.len();
    let j = terminal_ccps.first().map_or(0, Vec::len);
    if k == 0 || j == 0 || terminal_ccps.iter().any(|r| r.len() != j) {
        return Err(Error::invalid("terminal CCPs must be a non-empty K x J table"));
    }
    if anchor.action >= k || anchor.state >= j || !anchor.value.is_finite() {
        return Err(Error::invalid(format!("anchor {anchor:?} out of range")));
    }
    check_ccps(std::slice::from_ref(&terminal_ccps.to_vec()), j, k)?;
    for p in pairs {
        if p.k >= k || p.l >= k || p.x1 >= j || p.x2 >= j {
            return Err(Error::invalid(format!("pair {p:?} out of range")));
        }
    }
    let differences: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..j)
                .map(|x| (terminal_ccps[i][x].ln() - terminal_ccps[k - 1][x].ln()).to_f64())
                .collect()
        })
        .collect();

    // level[x] = u_K(x); edge x1 -> x2 carries u_K(x2) = u_K(x1) + d_k(x1) - d_l(x2)
    let mut level: Vec<Option<f64>> = vec![None; j];
    level[anchor.state] = Some(anchor.value - differences[anchor.action][anchor.state]);
    let mut queue = VecDeque::from([anchor.state]);
    let mut discrepancy = 0.0f64;
    while let Some(x) = queue.pop_front() {
        let base = level[x].expect("queued states have levels");
        for p in pairs {
            let (next, implied) = if p.x1 == x {
                (p.x2, base + differences[p.k][p.x1] - differences[p.l][p.x2])
            } else if p.x2 == x {
                (p.x1, base + differences[p.l][p.x2] - differences[p.k][p.x1])
            } else {
                continue;
            };
            match level[next] {
                Some(existing) => discrepancy = discrepancy.max((existing - implied).abs()),
                None => {
                    level[next] = Some(implied);
                    queue.push_back(next);
                }
            }
        }
    }
    let levels = (0..k)
        .map(|i| (0..j).map(|x| level[x].map(|base| base + differences[i][x])).collect())
        .collect();
    Ok(UtilityRecovery {
        differences,
        levels,
        level_identified: level.iter().map(Option::is_some).collect(),
        cycle_discrepancy: discrepancy,
    })
}

/// `logsumexp_j W_t,j(x1) - logsumexp_j W_t,j(x2)` per period and pair.
///
/// This is the amount by which a cross-state log CCP ratio differs from the
/// corresponding choice-value difference. It is zero for same-state pairs.
pub fn inclusive_value_gap<R: Real>(solution: &ValueSolution<R>, pairs: &[EqualityPair]) -> Result<Vec<Vec<f64>>> {
    solution
        .choice_values
        .iter()
        .map(|w| {
            pairs
                .iter()
                .map(|p| {
                    let column = |x: usize| w.iter().map(|r| r[x]).collect::<Vec<R>>();
                    Ok((logsumexp(&column(p.x1))? - logsumexp(&column(p.x2))?).to_f64())
                })
                .collect()
        })
        .collect()
}

/// Options shared by the identification pipelines.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentifyOptions {
    pub mode: SolveMode,
    /// Relative singular-value threshold; the working precision's default when `None`.
    pub rank_tol: Option<f64>,
    pub anchor: Option<Anchor>,
}

/// Identification from CCPs and transitions in working precision `R`.
pub fn identify_from_ccps<R: Real>(
    ccps: &[Vec<Vec<R>>],
    transitions: &[Vec<Vec<R>>],
    pairs: &[EqualityPair],
    options: &IdentifyOptions,
) -> Result<IdentificationResult> {
    let rank_tol = options.rank_tol.unwrap_or(R::DEFAULT_RANK_TOL);
    let ps = build_pair_system(transitions, pairs, rank_tol)?;
    check_panel_length(ccps.len(), ps.num_states, BASE_LABELS.length)?;
    let system = assemble_system(ccps, &ps)?;
    let mut result = solve_discounts(&system, rank_tol, options.mode)?;
    if let Some(anchor) = options.anchor {
        let terminal = ccps.last().expect("horizon checked");
        result.utilities_hat = Some(recover_utilities(terminal, pairs, anchor)?);
    }
    Ok(result)
}

/// Macro-state identification from macro-invariant CCPs.
pub fn identify_from_ccps_macro<R: Real>(
    ccps: &[Vec<Vec<R>>],
    transitions: &[Vec<Vec<R>>],
    pairs: &[EqualityPair],
    h: &[Vec<f64>],
    options: &IdentifyOptions,
) -> Result<IdentificationResult> {
    validate_macro_transition(h)?;
    let rank_tol = options.rank_tol.unwrap_or(R::DEFAULT_RANK_TOL);
    let ps = build_pair_system(transitions, pairs, rank_tol)?;
    let (j, m, horizon) = (ps.num_states, h.len(), ccps.len());
    if horizon < 4 || (horizon - 2) * m < 3 * (j - 1) {
        return Err(Error::InsufficientData {
            assumption: Some(Assumption::MacroPanelLength),
            detail: format!("(T - 2) M = {} < 3 (J - 1) = {}", horizon.saturating_sub(2) * m, 3 * (j - 1)),
        });
    }
    let system = assemble_system_macro(ccps, &ps, h)?;
    let mut result = solve_discounts_macro(&system, rank_tol, options.mode)?;
    if let Some(anchor) = options.anchor {
        let terminal = ccps.last().expect("horizon checked");
        result.utilities_hat = Some(recover_utilities(terminal, pairs, anchor)?);
    }
    Ok(result)
}

fn check_panel_length(horizon: usize, j: usize, label: Assumption) -> Result<()> {
    if horizon + 1 < 3 * j {
        return Err(Error::InsufficientData {
            assumption: Some(label),
            detail: format!("T = {horizon} < 3J - 1 = {}", 3 * j - 1),
        });
    }
    Ok(())
}

/// Exact-CCP identification: solves the model forward and identifies from
/// its CCPs, both in quad-double precision.
pub fn identify_exact(model: &ModelSpec, options: &IdentifyOptions) -> Result<IdentificationResult> {
    model.validate_for_identification()?;
    let prims = model.primitives::<QuadDouble>();
    let solution = solve_backward_in(&prims)?;
    let mut result = identify_from_ccps(&solution.ccps, &prims.transitions, &model.equality_pairs, options)?;
    result.inclusive_value_gap = Some(max_gap(&solution, &model.equality_pairs)?);
    Ok(result)
}

/// Exact-CCP macro-state identification with macro-invariant utilities.
pub fn identify_exact_macro(
    model: &ModelSpec,
    h: &[Vec<f64>],
    options: &IdentifyOptions,
) -> Result<IdentificationResult> {
    model.validate_for_identification()?;
    let prims = model.primitives::<QuadDouble>();
    let solution = solve_backward_in(&prims)?;
    let mut result =
        identify_from_ccps_macro(&solution.ccps, &prims.transitions, &model.equality_pairs, h, options)?;
    result.inclusive_value_gap = Some(max_gap(&solution, &model.equality_pairs)?);
    Ok(result)
}

/// Data-mode identification from a panel: empirical CCPs (smoothed before
/// logs) and pooled transition frequencies, in double precision. Passing `h`
/// uses the macro-state system.
pub fn identify_from_panel(
    panel: &PanelData,
    num_states: usize,
    num_actions: usize,
    pairs: &[EqualityPair],
    h: Option<&[Vec<f64>]>,
    options: &IdentifyOptions,
) -> Result<IdentificationResult> {
    let ccps = empirical_ccps(panel, num_states, num_actions, panel.horizon())?;
    let (smoothed, mut report) = ccps.smoothed();
    let transitions = estimate_transitions(panel, num_states, num_actions)?;
    report.unvisited_transition_rows = transitions.unvisited_rows();
    let mut result = match h {
        Some(h) => identify_from_ccps_macro(&smoothed, &transitions.f_hat, pairs, h, options)?,
        None => identify_from_ccps(&smoothed, &transitions.f_hat, pairs, options)?,
    };
    if report != SmoothingReport::default() {
        result.warnings.push(format!(
            "smoothed {} CCP cells, filled {} unvisited cells and {} unvisited transition rows",
            report.smoothed_cells, report.unvisited_cells, report.unvisited_transition_rows
        ));
    }
    result.smoothing = Some(report);
    Ok(result)
}

fn max_gap<R: Real>(solution: &ValueSolution<R>, pairs: &[EqualityPair]) -> Result<f64> {
    Ok(inclusive_value_gap(solution, pairs)?
        .iter()
        .flatten()
        .fold(0.0f64, |m, g| m.max(g.abs())))
}

/// Testable-assumption report for a model, evaluated on its exact CCPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub assumption: String,
    pub passed: bool,
    pub detail: String,
}

/// Evaluates the equality-pair, pair-rank, panel-length and system-rank
/// conditions in order, plus the macro-state pair when `h` is given.
pub fn check_assumptions(model: &ModelSpec, h: Option<&[Vec<f64>]>, rank_tol: Option<f64>) -> Result<Vec<AssumptionCheck>> {
    model.validate()?;
    let tol = rank_tol.unwrap_or(QuadDouble::DEFAULT_RANK_TOL);
    let mut report = Vec::new();
    let mut push = |a: Assumption, passed: bool, detail: String| {
        report.push(AssumptionCheck {
            assumption: a.label().to_string(),
            passed,
            detail,
        })
    };
    let j = model.num_states;
    let pairs_ok = model.equality_pairs.len() + 1 >= j;
    push(
        Assumption::EqualityPairs,
        pairs_ok,
        format!("{} pairs, {} required", model.equality_pairs.len(), j - 1),
    );
    if !pairs_ok || j < 2 {
        return Ok(report);
    }
    let prims = model.primitives::<QuadDouble>();
    let ps = match build_pair_system(&prims.transitions, &model.equality_pairs, tol) {
        Ok(ps) => {
            let sv = &ps.singular_values;
            push(
                Assumption::PairRank,
                true,
                format!("relative smallest singular value {:e}", (sv[sv.len() - 1] / sv[0]).to_f64()),
            );
            ps
        }
        Err(e) => {
            push(Assumption::PairRank, false, e.to_string());
            return Ok(report);
        }
    };
    let solution = solve_backward_in(&prims)?;
    let horizon = model.horizon;
    let length_ok = horizon + 1 >= 3 * j;
    push(
        Assumption::PanelLength,
        length_ok,
        format!("T = {horizon}, 3J - 1 = {}", 3 * j - 1),
    );
    if length_ok {
        let verdict = assemble_system(&solution.ccps, &ps)
            .and_then(|sys| solve_discounts(&sys, tol, SolveMode::PaperRightInverse));
        match verdict {
            Ok(r) => push(
                Assumption::SystemRank,
                true,
                format!(
                    "rank {} of {}, relative smallest singular value {:e}",
                    r.diagnostics.rank,
                    r.diagnostics.rows,
                    r.diagnostics.singular_values.last().unwrap_or(&0.0) / r.diagnostics.singular_values[0]
                ),
            ),
            Err(e) => push(Assumption::SystemRank, false, e.to_string()),
        }
    }
    if let Some(h) = h {
        validate_macro_transition(h)?;
        let m = h.len();
        let macro_len_ok = horizon >= 4 && (horizon - 2) * m >= 3 * (j - 1);
        push(
            Assumption::MacroPanelLength,
            macro_len_ok,
            format!("(T - 2) M = {}, 3 (J - 1) = {}", horizon.saturating_sub(2) * m, 3 * (j - 1)),
        );
        if macro_len_ok {
            let verdict = assemble_system_macro(&solution.ccps, &ps, h)
                .and_then(|sys| solve_discounts_macro(&sys, tol, SolveMode::PaperRightInverse));
            match verdict {
                Ok(r) => push(
                    Assumption::MacroSystemRank,
                    true,
                    format!("rank {} of {}", r.diagnostics.rank, r.diagnostics.rows),
                ),
                Err(e) => push(Assumption::MacroSystemRank, false, e.to_string()),
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_transitions() -> Vec<Vec<Vec<f64>>> {
        vec![
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
            vec![vec![0.8, 0.2], vec![0.1, 0.9]],
        ]
    }

    #[test]
    fn two_state_pair_matrix_is_scalar_difference() {
        let f = two_state_transitions();
        let ps = build_pair_system(&f, &[EqualityPair::new(0, 1, 0, 1)], 1e-10).unwrap();
        assert_eq!(ps.f_tilde.rows(), 1);
        assert!((ps.f_tilde[(0, 0)] - (0.3 - 0.1)).abs() < 1e-15);
        assert!((ps.f_tilde_pinv[(0, 0)] - 5.0).abs() < 1e-12);
        // F~_K row is f(0|0,K) - f(0|J,K)
        assert!((ps.f_tilde_k[(0, 0)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn identical_actions_violate_pair_rank() {
        let mut f = two_state_transitions();
        f[1] = f[0].clone();
        let err = build_pair_system(&f, &[EqualityPair::new(0, 1, 0, 0)], 1e-10).unwrap_err();
        assert_eq!(err.assumption(), Some(Assumption::PairRank));
    }

    #[test]
    fn too_few_pairs_is_invalid_input() {
        let f = vec![vec![vec![1.0 / 3.0; 3]; 3]; 2];
        let err = build_pair_system(&f, &[EqualityPair::new(0, 1, 0, 0)], 1e-10).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn uniform_ccps_give_zero_ratios_and_scaled_identity() {
        let f = two_state_transitions();
        let ps = build_pair_system(&f, &[EqualityPair::new(0, 1, 0, 1)], 1e-10).unwrap();
        let ccps = vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]];
        let blocks = build_ccp_blocks(&ccps, &ps, 0).unwrap();
        assert_eq!(blocks.d_t, vec![0.0]);
        assert_eq!(blocks.p_t.to_f64_rows(), vec![vec![0.5, 0.5]]);
        let bad = vec![vec![vec![1.0, 0.5], vec![0.0, 0.5]]];
        assert!(build_ccp_blocks(&bad, &ps, 0).is_err());
    }

    #[test]
    fn duplicated_row_is_rejected() {
        let a = Mat::from_rows(&[
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.5, -1.0, 2.0, 0.0],
            vec![1.0, 2.0, 3.0, 4.0],
        ]);
        let b = Mat::from_rows(&[vec![1.0, 0.0, 1.0, 0.0]]);
        let err = solve_discounts(&LinearSystem { a, b }, 1e-10, SolveMode::PaperRightInverse).unwrap_err();
        assert_eq!(err.assumption(), Some(Assumption::SystemRank));
    }

    #[test]
    fn right_inverse_solves_consistent_system() {
        let a = Mat::from_rows(&[
            vec![1.0, 2.0, 0.0, 4.0, 1.0],
            vec![0.5, -1.0, 2.0, 0.0, 3.0],
            vec![2.0, 0.0, 1.0, -1.0, 0.5],
        ]);
        let (c1, c2) = (0.25, -1.5);
        let b = Mat::from_fn(1, 5, |_, c| a[(0, c)] + c1 * a[(1, c)] + c2 * a[(2, c)]);
        for mode in [SolveMode::PaperRightInverse, SolveMode::ConstrainedLs] {
            let r = solve_discounts(&LinearSystem { a: a.clone(), b: b.clone() }, 1e-10, mode).unwrap();
            assert!((r.c1 - c1).abs() < 1e-12, "{mode:?}");
            assert!((r.c2 - c2).abs() < 1e-12);
            assert!((r.beta_hat - 0.8).abs() < 1e-12);
            assert!((r.delta_hat - 1.0 / (0.8 * 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn recovery_flags_disconnected_states() {
        let p = vec![vec![0.5, 0.7, 0.2], vec![0.5, 0.3, 0.8]];
        let anchor = Anchor { action: 1, state: 2, value: 0.0 };
        let r = recover_utilities(&p, &[EqualityPair::new(1, 1, 0, 2)], anchor).unwrap();
        assert_eq!(r.level_identified, vec![true, false, true]);
        assert_eq!(r.levels[1][1], None);
        assert!((r.differences[0][1] - (0.7f64 / 0.3).ln()).abs() < 1e-14);
        assert!((r.levels[0][0].unwrap()).abs() < 1e-14);
        let bad = Anchor { action: 2, state: 0, value: 0.0 };
        assert!(recover_utilities(&p, &[], bad).is_err());
    }

    #[test]
    fn macro_transition_must_be_stochastic() {
        assert!(validate_macro_transition(&[vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(validate_macro_transition(&[vec![1.0]]).is_ok());
    }
}
