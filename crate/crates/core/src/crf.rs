//! Grid CRF over patch labels conditioned on sparse codes.
//!
//! Node energy is `-y_j * (w . [z_j; 1])` with the bias folded into the last
//! weight entry; the pairwise term is a Potts penalty `gamma * 1[y_j != y_k]`
//! on the 4-connected grid with `gamma` fixed at 1. Sum-product loopy BP
//! yields per-patch saliency, max-product BP (or exact enumeration on small
//! grids) solves loss-augmented MAP, and max-margin gradients update the
//! node weights and the dictionary behind the codes.

use crate::error::{Error, Result};
use crate::imgfeat::PatchGrid;
use crate::linalg;
use crate::sparsecode::{Dict, SparseCode};

/// Messages are passed synchronously in fixed order with this damping.
const DAMPING: f64 = 0.5;
const MAX_SWEEPS: usize = 50;
/// Stop once the largest message change in a sweep falls below this. Chains
/// must match enumeration to 1e-6, which a looser stop cannot guarantee.
const MSG_TOL: f64 = 1e-7;
/// Grids up to this many nodes are decoded by exact enumeration.
const ENUM_LIMIT: usize = 16;

/// Per-patch labels in {-1, +1}, row-major on the grid.
pub type LabelField = Vec<i8>;

/// Node weights (last entry is the bias) and the fixed pairwise penalty for
/// one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub category: String,
    pub weights: Vec<f64>,
    pub gamma: f64,
}

impl CrfModel {
    pub fn new(category: impl Into<String>, weights: Vec<f64>) -> Self {
        Self { category: category.into(), weights, gamma: 1.0 }
    }

    pub fn atom_count(&self) -> usize {
        self.weights.len() - 1
    }

    /// `w . [z; 1]`
    pub fn node_potential(&self, code: &SparseCode) -> f64 {
        let mut a = self.weights[self.atom_count()];
        for (idx, c) in code.iter() {
            a += self.weights[idx] * c;
        }
        a
    }

    pub fn node_potentials(&self, codes: &[SparseCode]) -> Result<Vec<f64>> {
        for code in codes {
            if code.dict_size != self.atom_count() {
                return Err(Error::Dimension(format!(
                    "code over {} atoms vs {} node weights",
                    code.dict_size,
                    self.atom_count()
                )));
            }
        }
        Ok(codes.iter().map(|c| self.node_potential(c)).collect())
    }
}

fn check_sizes(len: usize, grid: &PatchGrid) -> Result<()> {
    if len != grid.patch_count() {
        return Err(Error::Dimension(format!(
            "{} values for a {}x{} grid",
            len, grid.rows, grid.cols
        )));
    }
    Ok(())
}

/// Undirected 4-neighborhood edges, row-major node indices.
fn grid_edges(grid: &PatchGrid) -> Vec<(usize, usize)> {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    edges
}

/// Neighbor node indices per node (up, left, down, right order).
fn neighbors(grid: &PatchGrid) -> Vec<Vec<usize>> {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut out = vec![Vec::with_capacity(4); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if r > 0 {
                out[i].push(i - cols);
            }
            if c > 0 {
                out[i].push(i - 1);
            }
            if r + 1 < rows {
                out[i].push(i + cols);
            }
            if c + 1 < cols {
                out[i].push(i + 1);
            }
        }
    }
    out
}

fn energy_from_potentials(
    labels: &[i8],
    potentials: &[f64],
    gamma: f64,
    grid: &PatchGrid,
) -> f64 {
    let mut e = 0.0;
    for (y, a) in labels.iter().zip(potentials) {
        e -= *y as f64 * a;
    }
    for (u, v) in grid_edges(grid) {
        if labels[u] != labels[v] {
            e += gamma;
        }
    }
    e
}

/// CRF energy of a labeling.
pub fn energy(
    labels: &LabelField,
    codes: &[SparseCode],
    model: &CrfModel,
    grid: &PatchGrid,
) -> Result<f64> {
    check_sizes(labels.len(), grid)?;
    check_sizes(codes.len(), grid)?;
    let potentials = model.node_potentials(codes)?;
    Ok(energy_from_potentials(labels, &potentials, model.gamma, grid))
}

/// Result of sum-product inference.
#[derive(Debug, Clone)]
pub struct Marginals {
    /// P(y_j = +1) per patch.
    pub probs: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Sum-product loopy BP marginals of `P(Y) ~ exp(-E)`.
pub fn infer_marginals(
    codes: &[SparseCode],
    model: &CrfModel,
    grid: &PatchGrid,
) -> Result<Marginals> {
    check_sizes(codes.len(), grid)?;
    let potentials = model.node_potentials(codes)?;
    Ok(marginals_from_potentials(&potentials, model.gamma, grid))
}

/// log(exp(a) + exp(b)) without overflow.
fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Messages are log-odds `log m(+1)/m(-1)`, one scalar per directed edge.
/// `msgs[v]` holds the messages INTO node v, aligned with `neighbors[v]`.
fn bp_sweeps(
    potentials: &[f64],
    gamma: f64,
    grid: &PatchGrid,
    max_product: bool,
) -> (Vec<Vec<f64>>, bool, usize) {
    let nbrs = neighbors(grid);
    let t = potentials.len();
    let mut msgs: Vec<Vec<f64>> = nbrs.iter().map(|n| vec![0.0; n.len()]).collect();
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        let mut next = msgs.clone();
        let mut max_change = 0.0f64;
        for v in 0..t {
            for (slot, &u) in nbrs[v].iter().enumerate() {
                // message u -> v, built from messages into u except v's own
                let mut incoming = 0.0;
                for (us, &w) in nbrs[u].iter().enumerate() {
                    if w != v {
                        incoming += msgs[u][us];
                    }
                }
                let s_plus = potentials[u] + incoming;
                let s_minus = -potentials[u];
                let eta = if max_product {
                    s_plus.max(s_minus - gamma) - (s_plus - gamma).max(s_minus)
                } else {
                    log_sum_exp(s_plus, s_minus - gamma)
                        - log_sum_exp(s_plus - gamma, s_minus)
                };
                let damped = DAMPING * msgs[v][slot] + (1.0 - DAMPING) * eta;
                max_change = max_change.max((damped - msgs[v][slot]).abs());
                next[v][slot] = damped;
            }
        }
        msgs = next;
        if max_change < MSG_TOL {
            converged = true;
            break;
        }
    }
    (msgs, converged, sweeps)
}

fn marginals_from_potentials(potentials: &[f64], gamma: f64, grid: &PatchGrid) -> Marginals {
    let (msgs, converged, sweeps) = bp_sweeps(potentials, gamma, grid, false);
    let probs = potentials
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let eta: f64 = 2.0 * a + msgs[j].iter().sum::<f64>();
            1.0 / (1.0 + (-eta).exp())
        })
        .collect();
    Marginals { probs, converged, sweeps }
}

/// `argmin_Y E(Y) - Hamming(Y, Y_gt)`: exact by enumeration on grids of at
/// most 16 nodes, max-product BP with the margin folded into the node
/// potentials otherwise. Ties decode toward -1.
pub fn loss_augmented_map(
    codes: &[SparseCode],
    model: &CrfModel,
    y_gt: &LabelField,
    grid: &PatchGrid,
) -> Result<LabelField> {
    check_sizes(codes.len(), grid)?;
    check_sizes(y_gt.len(), grid)?;
    let potentials = model.node_potentials(codes)?;
    Ok(map_from_potentials(&potentials, model.gamma, y_gt, grid))
}

fn map_from_potentials(
    potentials: &[f64],
    gamma: f64,
    y_gt: &[i8],
    grid: &PatchGrid,
) -> LabelField {
    let t = potentials.len();
    if t <= ENUM_LIMIT {
        let edges = grid_edges(grid);
        let mut best_mask = 0usize;
        let mut best_val = f64::INFINITY;
        for mask in 0..(1usize << t) {
            let label = |j: usize| if mask >> j & 1 == 1 { 1i8 } else { -1i8 };
            let mut val = 0.0;
            for j in 0..t {
                val -= label(j) as f64 * potentials[j];
                if label(j) != y_gt[j] {
                    val -= 1.0; // margin
                }
            }
            for &(u, v) in &edges {
                if label(u) != label(v) {
                    val += gamma;
                }
            }
            if val < best_val {
                best_val = val;
                best_mask = mask;
            }
        }
        return (0..t)
            .map(|j| if best_mask >> j & 1 == 1 { 1 } else { -1 })
            .collect();
    }

    // Folding the margin shifts each node potential by -gt/2: the state
    // difference of `y*a + 1[y != gt]` equals that of `y*(a - gt/2)`.
    let folded: Vec<f64> = potentials
        .iter()
        .zip(y_gt)
        .map(|(&a, &g)| a - g as f64 * 0.5)
        .collect();
    let (msgs, _, _) = bp_sweeps(&folded, gamma, grid, true);
    (0..t)
        .map(|j| {
            let eta: f64 = 2.0 * folded[j] + msgs[j].iter().sum::<f64>();
            if eta > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Margin loss pieces for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuredLoss {
    /// `E(Y_hat) - E(Y_gt)`
    pub beta: f64,
    /// Hamming distance between the labelings.
    pub hamming: f64,
    /// `hamming - beta`, the structured hinge.
    pub hinge: f64,
}

pub fn structured_loss(
    y_hat: &LabelField,
    y_gt: &LabelField,
    codes: &[SparseCode],
    model: &CrfModel,
    grid: &PatchGrid,
) -> Result<StructuredLoss> {
    let e_hat = energy(y_hat, codes, model, grid)?;
    let e_gt = energy(y_gt, codes, model, grid)?;
    let beta = e_hat - e_gt;
    let hamming = y_hat.iter().zip(y_gt).filter(|(a, b)| a != b).count() as f64;
    Ok(StructuredLoss { beta, hamming, hinge: hamming - beta })
}

/// `d beta / d w = sum_j (ygt_j - yhat_j) * [z_j; 1]`
pub fn grad_w(y_hat: &LabelField, y_gt: &LabelField, codes: &[SparseCode]) -> Vec<f64> {
    let r = codes.first().map(|c| c.dict_size).unwrap_or(0);
    let mut g = vec![0.0; r + 1];
    for ((&h, &t), code) in y_hat.iter().zip(y_gt).zip(codes) {
        let c = (t - h) as f64;
        if c == 0.0 {
            continue;
        }
        for (idx, v) in code.iter() {
            g[idx] += c * v;
        }
        g[r] += c;
    }
    g
}

/// Dictionary gradient of beta.
#[derive(Debug, Clone)]
pub struct DictGrad {
    /// Column-major like [`Dict`]: column j occupies `[j*k, (j+1)*k)`.
    pub data: Vec<f64>,
    pub k: usize,
    pub n_atoms: usize,
    /// Patches skipped because their active-set Gram matrix was singular.
    pub skipped: usize,
}

/// `d beta / d D` by implicit differentiation of each patch code through
/// the lasso stationarity system with its active set held fixed.
///
/// For a patch with active atoms A and code z on them, the stationarity
/// `2 D_A^T (D_A z - f) + lambda*theta = 0` gives, with the adjoint
/// `u = (D_A^T D_A)^{-1} g_A` where `g = (ygt - yhat) * w`:
/// `d beta / d d_p = u_p * (f - D_A z) - z_p * (D_A u)` on columns in A.
pub fn grad_d(
    y_hat: &LabelField,
    y_gt: &LabelField,
    codes: &[SparseCode],
    model: &CrfModel,
    dict: &Dict,
    features: &[Vec<f64>],
) -> Result<DictGrad> {
    let (k, r) = (dict.feature_dim(), dict.n_atoms());
    if model.atom_count() != r {
        return Err(Error::Dimension(format!(
            "{} node weights for {} atoms",
            model.atom_count(),
            r
        )));
    }
    let mut grad = DictGrad { data: vec![0.0; k * r], k, n_atoms: r, skipped: 0 };
    for (((&h, &t), code), f) in y_hat.iter().zip(y_gt).zip(codes).zip(features) {
        let c = (t - h) as f64;
        if c == 0.0 || code.sparsity() == 0 {
            continue;
        }
        let s = code.sparsity();
        let mut gram = vec![0.0; s * s];
        for a in 0..s {
            for b in a..s {
                let v = linalg::dot(dict.atom(code.support[a]), dict.atom(code.support[b]));
                gram[a * s + b] = v;
                gram[b * s + a] = v;
            }
        }
        let g_active: Vec<f64> = code.support.iter().map(|&j| c * model.weights[j]).collect();
        let u = match linalg::solve(&gram, &g_active, s) {
            Some(u) => u,
            None => {
                grad.skipped += 1;
                continue;
            }
        };
        // residual f - D_A z and the combination D_A u
        let mut residual = f.clone();
        let mut du = vec![0.0; k];
        for (i, (&j, &zj)) in code.support.iter().zip(&code.coeffs).enumerate() {
            linalg::axpy(-zj, dict.atom(j), &mut residual);
            linalg::axpy(u[i], dict.atom(j), &mut du);
        }
        for (i, &j) in code.support.iter().enumerate() {
            let col = &mut grad.data[j * k..(j + 1) * k];
            for (m, slot) in col.iter_mut().enumerate() {
                *slot += u[i] * residual[m] - code.coeffs[i] * du[m];
            }
        }
    }
    Ok(grad)
}

/// Step `w` and `D` along the direction that decreases the structured hinge
/// `Hamming - beta` (i.e. increases beta), then renormalize the atoms.
pub fn apply_update(
    model: &mut CrfModel,
    dict: &mut Dict,
    gw: &[f64],
    gd: &DictGrad,
    rho0: f64,
) -> Result<()> {
    if gw.len() != model.weights.len() {
        return Err(Error::Dimension(format!(
            "gradient length {} vs {} weights",
            gw.len(),
            model.weights.len()
        )));
    }
    if gd.k != dict.feature_dim() || gd.n_atoms != dict.n_atoms() {
        return Err(Error::Dimension("dictionary gradient shape mismatch".into()));
    }
    linalg::axpy(rho0, gw, &mut model.weights);
    for j in 0..dict.n_atoms() {
        let col = &gd.data[j * gd.k..(j + 1) * gd.k];
        linalg::axpy(rho0, col, dict.atom_mut(j));
    }
    dict.normalize_atoms();
    Ok(())
}
