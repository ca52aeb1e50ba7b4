use nalgebra::{DMatrix, DVector, RowDVector};

use crate::model::{condition_number, numerical_rank, ObservablePair};

use super::ObservabilityError;

/// Transforms putting an observable pair into integrator chains observed at
/// their heads: a state change `δ`, an output injection `γ` and, for several
/// outputs, an output change `G` (the identity for a scalar observation).
#[derive(Debug, Clone, PartialEq)]
pub struct BrunovskyForm {
    pub delta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub output_change: DMatrix<f64>,
    /// `δ(𝒜 + γ𝒞)δ⁻¹`.
    pub a_can: DMatrix<f64>,
    /// `G𝒞δ⁻¹`.
    pub c_can: DMatrix<f64>,
    /// Chain lengths, in output order.
    pub blocks: Vec<usize>,
}

impl BrunovskyForm {
    /// Largest entrywise deviation of `(a_can, c_can)` from the exact chain form.
    pub fn certificate_error(&self) -> f64 {
        let (a_ref, c_ref) = chain_form(&self.blocks);
        (&self.a_can - a_ref).amax().max((&self.c_can - c_ref).amax())
    }
}

/// The exact chain pair for the given block sizes: upper shifts inside each
/// block, and one output row selecting each block head.
pub fn chain_form(blocks: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n: usize = blocks.iter().sum();
    let mut a = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(blocks.len(), n);
    let mut start = 0;
    for (i, &len) in blocks.iter().enumerate() {
        c[(i, start)] = 1.0;
        for k in 0..len.saturating_sub(1) {
            a[(start + k, start + k + 1)] = 1.0;
        }
        start += len;
    }
    (a, c)
}

/// Condition number of `δ` above which the reduction is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Largest entrywise canonical-form residual a returned reduction may have.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-8;

/// Reduces an observable pair to chain form.
///
/// Works on the dual pair `(𝒜ᵀ, 𝒞ᵀ)`, which is controllable: with `M` the
/// matrix of selected Krylov columns `𝒜ᵀᵏ c_iᵀ` grouped by output, `q_r` the
/// last row of block `r` of `M⁻¹` and `T` the rows `q_r𝒜ᵀᵏ`, feedback then
/// cancels the last row of each block. Transposing and reversing each block
/// turns the result into chains observed at their heads.
pub fn brunovsky_reduce(pair: &ObservablePair) -> Result<BrunovskyForm, ObservabilityError> {
    if !pair.observable() {
        return Err(ObservabilityError::NotObservable);
    }
    let a = pair.a();
    let c = pair.c();
    let n = pair.state_dim();
    let m = pair.output_dim();
    let at = a.transpose();

    let indices = observability_indices(a, c);
    let active: Vec<usize> = (0..m).filter(|&i| indices[i] > 0).collect();
    let blocks: Vec<usize> = active.iter().map(|&i| indices[i]).collect();
    let ends: Vec<usize> = blocks
        .iter()
        .scan(0, |acc, &len| {
            *acc += len;
            Some(*acc - 1)
        })
        .collect();

    let mut krylov = DMatrix::zeros(n, n);
    let mut col = 0;
    for &i in &active {
        let mut v: DVector<f64> = c.row(i).transpose();
        for _ in 0..indices[i] {
            krylov.set_column(col, &v);
            v = &at * v;
            col += 1;
        }
    }
    let krylov_inv = krylov
        .try_inverse()
        .ok_or_else(|| ObservabilityError::IllConditionedTransform("Krylov matrix is singular".into()))?;

    let mut t = DMatrix::zeros(n, n);
    let mut row = 0;
    for (r, &len) in blocks.iter().enumerate() {
        let mut q: RowDVector<f64> = krylov_inv.row(ends[r]).into_owned();
        for _ in 0..len {
            t.set_row(row, &q);
            q = &q * &at;
            row += 1;
        }
    }
    let cond = condition_number(&t);
    if !(cond <= MAX_CONDITION) {
        return Err(ObservabilityError::IllConditionedTransform(format!(
            "condition number of δ is {cond:e}"
        )));
    }
    let t_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| ObservabilityError::IllConditionedTransform("δ is singular".into()))?;
    let t_inv = refine_inverse(&t, t_inv);

    // Input change making each block's last row of T𝒞ᵀG a unit vector;
    // outputs without a chain are mapped to zero.
    let tb = &t * c.transpose();
    let lasts = DMatrix::from_fn(active.len(), m, |r, j| tb[(ends[r], j)]);
    let square = DMatrix::from_fn(active.len(), active.len(), |r, s| lasts[(r, active[s])]);
    let square_inv = square
        .try_inverse()
        .ok_or_else(|| ObservabilityError::CouplingNotRemovable { output: active[0] })?;
    let mut g = DMatrix::zeros(m, m);
    for (s, &i) in active.iter().enumerate() {
        for (k, &j) in active.iter().enumerate() {
            g[(j, i)] = square_inv[(k, s)];
        }
    }
    for j in (0..m).filter(|j| !active.contains(j)) {
        let coupled = &square_inv * lasts.column(j);
        g[(j, j)] = 1.0;
        for (k, &i) in active.iter().enumerate() {
            g[(i, j)] = -coupled[k];
        }
    }

    // Feedback cancelling the last row of every block.
    let a_bar = &t * &at * &t_inv;
    let mut k_bar = DMatrix::zeros(m, n);
    for (r, &i) in active.iter().enumerate() {
        k_bar.set_row(i, &(-a_bar.row(ends[r])));
    }
    let feedback = &g * k_bar * &t;

    // Reverse each block: first coordinate becomes the chain head.
    let mut perm = DMatrix::zeros(n, n);
    let mut start = 0;
    for &len in &blocks {
        for k in 0..len {
            perm[(start + k, start + len - 1 - k)] = 1.0;
        }
        start += len;
    }
    let delta = &perm * t_inv.transpose();
    let delta_inv = t.transpose() * &perm;
    let gamma = feedback.transpose();
    let output_change = g.transpose();
    // Grouped so the large injection terms cancel before meeting `δ⁻¹`.
    let c_delta_inv = c * &delta_inv;
    let a_can = &delta * a * &delta_inv + (&delta * &gamma) * &c_delta_inv;
    let c_full = &output_change * c_delta_inv;
    let c_can = DMatrix::from_fn(active.len(), n, |r, col| c_full[(active[r], col)]);
    let inactive_residual = (0..m)
        .filter(|j| !active.contains(j))
        .map(|j| c_full.row(j).amax())
        .fold(0.0, f64::max);
    if inactive_residual > 1e-8 {
        return Err(ObservabilityError::CouplingNotRemovable {
            output: (0..m).find(|j| !active.contains(j)).unwrap_or(0),
        });
    }
    let form = BrunovskyForm {
        delta,
        gamma,
        output_change,
        a_can,
        c_can,
        blocks,
    };
    let residual = form.certificate_error();
    if !(residual <= CERTIFICATE_TOLERANCE) {
        return Err(ObservabilityError::IllConditionedTransform(format!(
            "canonical-form residual {residual:e} exceeds {CERTIFICATE_TOLERANCE:e}"
        )));
    }
    Ok(form)
}

/// Newton steps `X ← X + X(I − DX)` towards `D⁻¹`, with the residual from
/// compensated dot products so `X` ends up accurate to working precision.
fn refine_inverse(d: &DMatrix<f64>, mut x: DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    for _ in 0..3 {
        let residual = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { 1.0 } else { 0.0 };
            compensated_dot(diag, d.row(i).iter().zip(x.column(j).iter()).map(|(a, b)| (-a, *b)))
        });
        if residual.amax() == 0.0 {
            break;
        }
        x += &x * &residual;
    }
    x
}

/// `init + Σ aᵢbᵢ` in twice the working precision, then rounded.
fn compensated_dot(init: f64, terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut carry) = (init, 0.0);
    for (a, b) in terms {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let s = sum + p;
        let bp = s - sum;
        let s_err = (sum - (s - bp)) + (p - bp);
        sum = s;
        carry += p_err + s_err;
    }
    sum + carry
}

/// Observability indices: rows `c_i𝒜^l` are taken in the order
/// `l = 0, 1, ...` and `i = 1..m`, keeping the independent ones; `μ_i` is the
/// number kept for output `i` (a chain stops at its first dependent row).
fn observability_indices(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let m = c.nrows();
    let mut indices = vec![0; m];
    let mut open = vec![true; m];
    let mut selected: Vec<RowDVector<f64>> = Vec::new();
    let mut current: Vec<RowDVector<f64>> = (0..m).map(|i| c.row(i).into_owned()).collect();
    for _ in 0..n {
        for i in 0..m {
            if !open[i] || selected.len() == n {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(current[i].clone());
            if numerical_rank(&DMatrix::from_rows(&trial)) == trial.len() {
                selected = trial;
                indices[i] += 1;
            } else {
                open[i] = false;
            }
        }
        for i in 0..m {
            current[i] = &current[i] * a;
        }
    }
    indices
}
