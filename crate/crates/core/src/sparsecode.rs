//! Sparse coding: feature-sign l1 solver, k-means dictionary
//! initialization, and category-aware coding on concatenated dictionaries.
//!
//! The solver minimizes the squared-loss lasso
//! `||f - D z||^2_2 + lambda * ||z||_1`. Category-aware coding reuses the
//! per-category codes: their joint support selects a small sub-dictionary
//! from the concatenation, a second solve runs on that sub-dictionary, and
//! the result is scattered back to global atom indices.

use crate::error::{Error, Result};
use crate::imgfeat::Descriptor;
use crate::linalg;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Atom matrix, one unit-norm column per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Dict {
    k: usize,
    data: Vec<f64>, // column-major: atom j occupies [j*k, (j+1)*k)
}

impl Dict {
    pub fn from_atoms(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() % k != 0 {
            return Err(Error::Dimension(format!(
                "atom data length {} not a multiple of k={}",
                data.len(),
                k
            )));
        }
        Ok(Self { k, data })
    }

    pub fn feature_dim(&self) -> usize {
        self.k
    }

    pub fn n_atoms(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.data[j * self.k..(j + 1) * self.k]
    }

    pub fn atom_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.k..(j + 1) * self.k]
    }

    /// Rescale every atom to unit L2 norm (atoms with ~zero norm are left).
    pub fn normalize_atoms(&mut self) {
        for j in 0..self.n_atoms() {
            let a = self.atom_mut(j);
            let n = linalg::norm2(a);
            if n > 1e-12 {
                for v in a.iter_mut() {
                    *v /= n;
                }
            }
        }
    }

    /// `D z` as a dense k-vector.
    pub fn reconstruct(&self, code: &SparseCode) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (&idx, &c) in code.support.iter().zip(&code.coeffs) {
            linalg::axpy(c, self.atom(idx), &mut out);
        }
        out
    }

    /// Concatenate the atoms of `parts` in order.
    pub fn concat(parts: &[&Dict]) -> Result<Dict> {
        let k = parts.first().map(|d| d.k).unwrap_or(0);
        if parts.iter().any(|d| d.k != k) {
            return Err(Error::Dimension("dictionaries disagree on feature dim".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|d| d.data.len()).sum());
        for d in parts {
            data.extend_from_slice(&d.data);
        }
        Dict::from_atoms(k, data)
    }
}

/// Dictionary owned by one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDictionary {
    pub category: String,
    pub atoms: Dict,
}

/// Ordered concatenation of category dictionaries (background last), with
/// per-atom ownership realized as contiguous index ranges.
#[derive(Debug, Clone)]
pub struct GlobalDictionary {
    pub dict: Dict,
    /// Block names in concatenation order.
    pub names: Vec<String>,
    /// `offsets[b]..offsets[b+1]` are the atoms owned by block `b`.
    pub offsets: Vec<usize>,
}

impl GlobalDictionary {
    pub fn build(parts: &[CategoryDictionary]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Capacity("no dictionaries to concatenate".into()));
        }
        let dict = Dict::concat(&parts.iter().map(|p| &p.atoms).collect::<Vec<_>>())?;
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut cum = 0;
        offsets.push(0);
        for p in parts {
            cum += p.atoms.n_atoms();
            offsets.push(cum);
        }
        Ok(Self {
            dict,
            names: parts.iter().map(|p| p.category.clone()).collect(),
            offsets,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.names.len()
    }

    pub fn total_atoms(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_size(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }

    /// Owning block of a global atom index.
    pub fn owner(&self, atom: usize) -> usize {
        debug_assert!(atom < self.total_atoms());
        self.offsets.partition_point(|&o| o <= atom) - 1
    }
}

/// Sparse coefficient vector with explicit, strictly increasing support.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub dict_size: usize,
}

impl SparseCode {
    pub fn empty(dict_size: usize) -> Self {
        Self { support: Vec::new(), coeffs: Vec::new(), dict_size }
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn coeff(&self, atom: usize) -> f64 {
        match self.support.binary_search(&atom) {
            Ok(i) => self.coeffs[i],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.coeffs.iter().copied())
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dict_size];
        for (idx, c) in self.iter() {
            v[idx] = c;
        }
        v
    }
}

/// Sparsity penalty and dictionary construction settings.
///
/// `lambda2`/`lambda3` only weigh the verification functional
/// [`category_aware_objective`]; the two-step solution uses `lambda` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingConfig {
    pub lambda: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for CodingConfig {
    fn default() -> Self {
        Self { lambda: 0.15, kmeans_iters: 20, seed: 0, lambda2: 1.0, lambda3: 0.15 }
    }
}

/// `||f - D z||^2_2 + lambda ||z||_1`
pub fn lasso_objective(f: &[f64], dict: &Dict, code: &SparseCode, lambda: f64) -> f64 {
    let recon = dict.reconstruct(code);
    let resid_sq: f64 = f.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum();
    resid_sq + lambda * code.l1_norm()
}

/// Verification functional for category-aware coding: the global lasso term
/// plus, for every object block (background excluded), the reconstruction
/// and l1 terms of the code restricted to that block's atoms.
pub fn category_aware_objective(
    f: &[f64],
    global: &GlobalDictionary,
    code: &SparseCode,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> f64 {
    let mut total = lasso_objective(f, &global.dict, code, lambda1);
    for b in 0..global.n_blocks().saturating_sub(1) {
        let (lo, hi) = (global.offsets[b], global.offsets[b + 1]);
        let mut recon = vec![0.0; global.dict.feature_dim()];
        let mut l1 = 0.0;
        for (idx, c) in code.iter() {
            if idx >= lo && idx < hi {
                linalg::axpy(c, global.dict.atom(idx), &mut recon);
                l1 += c.abs();
            }
        }
        let resid_sq: f64 = f.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum();
        total += lambda2 * (resid_sq + lambda3 * l1);
    }
    total
}

const SIGN_TOL: f64 = 1e-12;

/// Feature-sign search for the squared-loss lasso.
///
/// At the returned code, `|2 d^T (Dz - f)| <= lambda` holds on inactive
/// atoms and equals `lambda` with consistent sign on active ones, to well
/// below the 1e-6 contract tolerance.
pub fn feature_sign(f: &[f64], dict: &Dict, lambda: f64) -> Result<SparseCode> {
    let (k, r) = (dict.feature_dim(), dict.n_atoms());
    if r == 0 {
        return Err(Error::Dimension("empty dictionary".into()));
    }
    if f.len() != k {
        return Err(Error::Dimension(format!(
            "feature dim {} != atom dim {}",
            f.len(),
            k
        )));
    }
    if lambda <= 0.0 {
        return Err(Error::Numeric("sparsity penalty must be positive".into()));
    }

    let mut z = vec![0.0f64; r];
    let mut active: Vec<usize> = Vec::new();
    let mut residual = f.to_vec(); // f - D z
    let recompute_residual = |z: &[f64], active: &[usize], residual: &mut Vec<f64>| {
        residual.copy_from_slice(f);
        for &j in active {
            linalg::axpy(-z[j], dict.atom(j), residual);
        }
    };
    let objective = |z: &[f64], active: &[usize]| -> f64 {
        let mut resid = f.to_vec();
        let mut l1 = 0.0;
        for &j in active {
            linalg::axpy(-z[j], dict.atom(j), &mut resid);
            l1 += z[j].abs();
        }
        linalg::dot(&resid, &resid) + lambda * l1
    };

    let max_outer = 4 * r + 64;
    for _ in 0..max_outer {
        // Activation: most violating zero coefficient, if any.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..r {
            if z[j] != 0.0 {
                continue;
            }
            let grad = -2.0 * linalg::dot(dict.atom(j), &residual);
            if grad.abs() > lambda + 1e-10 {
                match best {
                    Some((_, g)) if grad.abs() <= g.abs() => {}
                    _ => best = Some((j, grad)),
                }
            }
        }
        match best {
            Some((j, grad)) => {
                active.push(j);
                active.sort_unstable();
                // optimistic sign: opposite to the loss gradient
                z[j] = if grad > 0.0 { -SIGN_TOL } else { SIGN_TOL };
            }
            None => break, // all inactive atoms satisfy the subgradient bound
        }

        // Feature-sign steps until the active set is stationary.
        let max_inner = 4 * r + 64;
        for _ in 0..max_inner {
            let s = active.len();
            let mut gram = vec![0.0; s * s];
            let mut rhs = vec![0.0; s];
            for (a, &ja) in active.iter().enumerate() {
                for (b, &jb) in active.iter().enumerate().skip(a) {
                    let v = linalg::dot(dict.atom(ja), dict.atom(jb));
                    gram[a * s + b] = v;
                    gram[b * s + a] = v;
                }
                rhs[a] = linalg::dot(dict.atom(ja), f) - 0.5 * lambda * z[ja].signum();
            }
            let z_new = {
                let mut ridge = 0.0;
                loop {
                    let mut g = gram.clone();
                    for d in 0..s {
                        g[d * s + d] += ridge;
                    }
                    if let Some(sol) = linalg::solve(&g, &rhs, s) {
                        break sol;
                    }
                    ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 };
                    if ridge > 1e-2 {
                        break vec![0.0; s]; // degenerate; line search keeps the best point
                    }
                }
            };

            // Discrete line search over sign-change points toward z_new.
            let z_cur: Vec<f64> = active.iter().map(|&j| z[j]).collect();
            let set_point = |z: &mut [f64], t: f64, zeroed: Option<usize>| {
                for (i, &j) in active.iter().enumerate() {
                    z[j] = if t == 1.0 {
                        z_new[i]
                    } else {
                        z_cur[i] + t * (z_new[i] - z_cur[i])
                    };
                }
                if let Some(i) = zeroed {
                    z[active[i]] = 0.0;
                }
            };
            set_point(&mut z, 1.0, None);
            let mut best = (1.0, None);
            let mut best_obj = objective(&z, &active);
            set_point(&mut z, 0.0, None);
            let current_obj = objective(&z, &active);
            for i in 0..s {
                if z_cur[i] != 0.0 && z_cur[i].signum() != z_new[i].signum() {
                    let t = z_cur[i] / (z_cur[i] - z_new[i]);
                    if t > 0.0 && t < 1.0 {
                        set_point(&mut z, t, Some(i));
                        let obj = objective(&z, &active);
                        if obj < best_obj {
                            best_obj = obj;
                            best = (t, Some(i));
                        }
                    }
                }
            }
            if best_obj > current_obj + 1e-14 {
                // No descent available: restore and stop refining this set.
                set_point(&mut z, 0.0, None);
                recompute_residual(&z, &active, &mut residual);
                break;
            }
            set_point(&mut z, best.0, best.1);
            for &j in &active {
                if z[j].abs() < SIGN_TOL {
                    z[j] = 0.0;
                }
            }
            active.retain(|&j| z[j] != 0.0);
            recompute_residual(&z, &active, &mut residual);

            // Stationarity of the active set.
            let stationary = active.iter().all(|&j| {
                let grad = -2.0 * linalg::dot(dict.atom(j), &residual);
                (grad + lambda * z[j].signum()).abs() < 1e-9
            });
            if stationary {
                break;
            }
        }
    }

    // Activation placeholders that never received a real step are dropped.
    let support: Vec<usize> = (0..r).filter(|&j| z[j].abs() > 1e-11).collect();
    let coeffs = support.iter().map(|&j| z[j]).collect();
    Ok(SparseCode { support, coeffs, dict_size: r })
}

/// Independent feature-sign solve against every dictionary, in order.
pub fn code_all_categories(
    f: &[f64],
    dicts: &[&Dict],
    lambda: f64,
) -> Result<Vec<SparseCode>> {
    let k = dicts.first().map(|d| d.feature_dim()).unwrap_or(0);
    if dicts.iter().any(|d| d.feature_dim() != k) {
        return Err(Error::Dimension("dictionaries disagree on feature dim".into()));
    }
    dicts.iter().map(|d| feature_sign(f, d, lambda)).collect()
}

/// Stack per-category codes into one code over the concatenated dictionary.
pub fn concat_codes(codes: &[SparseCode], global: &GlobalDictionary) -> Result<SparseCode> {
    if codes.len() != global.n_blocks() {
        return Err(Error::Dimension(format!(
            "{} codes for {} dictionary blocks",
            codes.len(),
            global.n_blocks()
        )));
    }
    let mut support = Vec::new();
    let mut coeffs = Vec::new();
    for (b, code) in codes.iter().enumerate() {
        if code.dict_size != global.block_size(b) {
            return Err(Error::Dimension(format!(
                "code over {} atoms for block '{}' of {} atoms",
                code.dict_size,
                global.names[b],
                global.block_size(b)
            )));
        }
        let off = global.offsets[b];
        for (idx, c) in code.iter() {
            support.push(off + idx);
            coeffs.push(c);
        }
    }
    Ok(SparseCode { support, coeffs, dict_size: global.total_atoms() })
}

/// Atoms of the concatenation at the code's support, order preserved,
/// plus the sub-index -> global-index mapping.
pub fn build_sub_dictionary(
    z_con: &SparseCode,
    global: &GlobalDictionary,
) -> (Dict, Vec<usize>) {
    let k = global.dict.feature_dim();
    let mut data = Vec::with_capacity(z_con.sparsity() * k);
    for &idx in &z_con.support {
        data.extend_from_slice(global.dict.atom(idx));
    }
    (Dict { k, data }, z_con.support.clone())
}

/// Two-step category-aware code: solve on the sub-dictionary selected by
/// the concatenated per-category codes, then scatter to global indices.
pub fn category_aware_code(
    f: &[f64],
    global: &GlobalDictionary,
    codes: &[SparseCode],
    lambda: f64,
) -> Result<SparseCode> {
    let z_con = concat_codes(codes, global)?;
    if z_con.sparsity() == 0 {
        return Ok(SparseCode::empty(global.total_atoms()));
    }
    let (sub, mapping) = build_sub_dictionary(&z_con, global);
    let z_sub = feature_sign(f, &sub, lambda)?;
    let support: Vec<usize> = z_sub.support.iter().map(|&p| mapping[p]).collect();
    Ok(SparseCode { support, coeffs: z_sub.coeffs, dict_size: global.total_atoms() })
}

/// Lloyd k-means with k-means++ seeding; centroids are unit-normalized on
/// output. Ties in assignment go to the lowest centroid index; empty
/// clusters are reseeded from the point farthest from its centroid.
pub fn kmeans_init(
    descriptors: &[Descriptor],
    r: usize,
    seed: u64,
    iters: usize,
) -> Result<Dict> {
    let n = descriptors.len();
    if n < r {
        return Err(Error::Capacity(format!(
            "{} descriptors for {} atoms",
            n, r
        )));
    }
    if r == 0 {
        return Err(Error::Capacity("requested zero atoms".into()));
    }
    let dim = descriptors[0].values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(r);
    let first = rng.random_range(0..n);
    centroids.push(descriptors[first].values.clone());
    let mut min_d2: Vec<f64> = descriptors
        .iter()
        .map(|d| dist2(&d.values, &centroids[0]))
        .collect();
    while centroids.len() < r {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                u -= d;
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining points coincide with a centroid
            centroids.len() % n
        };
        centroids.push(descriptors[pick].values.clone());
        for (i, d) in descriptors.iter().enumerate() {
            let nd = dist2(&d.values, centroids.last().unwrap());
            if nd < min_d2[i] {
                min_d2[i] = nd;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, d) in descriptors.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let dd = dist2(&d.values, cen);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0f64; dim]; r];
        let mut counts = vec![0usize; r];
        for (i, d) in descriptors.iter().enumerate() {
            linalg::axpy(1.0, &d.values, &mut sums[assignment[i]]);
            counts[assignment[i]] += 1;
        }
        let mut taken = vec![false; n];
        for c in 0..r {
            if counts[c] > 0 {
                for (s, v) in sums[c].iter().zip(centroids[c].iter_mut()) {
                    *v = s / counts[c] as f64;
                }
            } else {
                // reseed from the farthest unclaimed point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = dist2(&descriptors[a].values, &centroids[assignment[a]]);
                        let db = dist2(&descriptors[b].values, &centroids[assignment[b]]);
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                taken[far] = true;
                centroids[c] = descriptors[far].values.clone();
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut data = Vec::with_capacity(r * dim);
    for mut c in centroids {
        let norm = linalg::norm2(&c);
        if norm > 1e-12 {
            for v in c.iter_mut() {
                *v /= norm;
            }
        } else {
            // zero centroid: fall back to a fixed unit vector
            c = vec![0.0; dim];
            c[0] = 1.0;
        }
        data.extend_from_slice(&c);
    }
    Dict::from_atoms(dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = linalg::norm2(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn desc(values: Vec<f64>) -> Descriptor {
        Descriptor { values }
    }

    #[test]
    fn feature_sign_zero_feature() {
        let d = Dict::from_atoms(3, unit(vec![1.0, 2.0, 2.0])).unwrap();
        let code = feature_sign(&[0.0, 0.0, 0.0], &d, 0.15).unwrap();
        assert_eq!(code.sparsity(), 0);
    }

    #[test]
    fn feature_sign_single_matching_atom() {
        // D = [f], unit f, lambda 0.15 -> z = 1 - lambda/2 = 0.925
        let f = unit(vec![3.0, 4.0, 0.0, 1.0]);
        let d = Dict::from_atoms(4, f.clone()).unwrap();
        let code = feature_sign(&f, &d, 0.15).unwrap();
        assert_eq!(code.support, vec![0]);
        assert!((code.coeffs[0] - 0.925).abs() < 1e-10);
    }

    #[test]
    fn feature_sign_dimension_mismatch() {
        let d = Dict::from_atoms(3, unit(vec![1.0, 0.0, 0.0])).unwrap();
        assert!(matches!(
            feature_sign(&[1.0, 0.0], &d, 0.15),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn feature_sign_orthogonal_pair_soft_threshold() {
        // Orthonormal atoms: solution is entrywise soft thresholding.
        let d = Dict::from_atoms(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = [0.8, 0.04];
        let code = feature_sign(&f, &d, 0.15).unwrap();
        assert_eq!(code.support, vec![0]);
        assert!((code.coeffs[0] - (0.8 - 0.075)).abs() < 1e-10);
    }

    #[test]
    fn feature_sign_optimality_conditions_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = 6;
            let r = 5;
            let mut data = Vec::new();
            for _ in 0..r {
                data.extend(unit((0..k).map(|_| rng.random::<f64>() - 0.5).collect()));
            }
            let d = Dict::from_atoms(k, data).unwrap();
            let f: Vec<f64> = (0..k).map(|_| rng.random::<f64>() - 0.5).collect();
            let code = feature_sign(&f, &d, 0.15).unwrap();
            let recon = d.reconstruct(&code);
            for j in 0..r {
                let g = 2.0 * linalg::dot(
                    d.atom(j),
                    &recon.iter().zip(&f).map(|(a, b)| a - b).collect::<Vec<_>>(),
                );
                let c = code.coeff(j);
                if c == 0.0 {
                    assert!(g.abs() <= 0.15 + 1e-6, "inactive violation {}", g);
                } else {
                    assert!((g + 0.15 * c.signum()).abs() < 1e-6, "active violation {}", g);
                }
            }
        }
    }

    #[test]
    fn concat_preserves_block_positions() {
        // six atoms, block layout 2+2+2; category 1 owns global atoms 2,3
        let e = |i: usize| {
            let mut v = vec![0.0; 6];
            v[i] = 1.0;
            v
        };
        let parts: Vec<CategoryDictionary> = (0..3)
            .map(|b| CategoryDictionary {
                category: format!("c{}", b),
                atoms: Dict::from_atoms(6, [e(2 * b), e(2 * b + 1)].concat()).unwrap(),
            })
            .collect();
        let global = GlobalDictionary::build(&parts).unwrap();
        assert_eq!(global.total_atoms(), 6);
        assert_eq!(global.owner(2), 1);
        assert_eq!(global.owner(3), 1);

        let codes = vec![
            SparseCode::empty(2),
            SparseCode { support: vec![0, 1], coeffs: vec![0.5, -0.25], dict_size: 2 },
            SparseCode::empty(2),
        ];
        let z = concat_codes(&codes, &global).unwrap();
        assert_eq!(z.support, vec![2, 3]);
        assert_eq!(z.coeffs, vec![0.5, -0.25]);
        assert_eq!(z.dict_size, 6);
    }

    #[test]
    fn sub_dictionary_mapping() {
        let mut data = Vec::new();
        for i in 0..8 {
            let mut v = vec![0.0; 8];
            v[i] = 1.0;
            data.extend(v);
        }
        let parts = vec![CategoryDictionary {
            category: "a".into(),
            atoms: Dict::from_atoms(8, data).unwrap(),
        }];
        let global = GlobalDictionary::build(&parts).unwrap();
        let z_con = SparseCode { support: vec![3, 7], coeffs: vec![1.0, 2.0], dict_size: 8 };
        let (sub, map) = build_sub_dictionary(&z_con, &global);
        assert_eq!(sub.n_atoms(), 2);
        assert_eq!(map, vec![3, 7]);
        assert_eq!(sub.atom(0), global.dict.atom(3));

        let empty = SparseCode::empty(8);
        let (sub, map) = build_sub_dictionary(&empty, &global);
        assert_eq!(sub.n_atoms(), 0);
        assert!(map.is_empty());
    }

    #[test]
    fn category_aware_zero_feature() {
        let parts = vec![CategoryDictionary {
            category: "a".into(),
            atoms: Dict::from_atoms(3, unit(vec![1.0, 1.0, 0.0])).unwrap(),
        }];
        let global = GlobalDictionary::build(&parts).unwrap();
        let f = [0.0, 0.0, 0.0];
        let codes = code_all_categories(&f, &[&parts[0].atoms], 0.15).unwrap();
        let z = category_aware_code(&f, &global, &codes, 0.15).unwrap();
        assert_eq!(z.sparsity(), 0);
    }

    #[test]
    fn category_aware_single_atom_soft_threshold() {
        let f = unit(vec![1.0, 2.0, 3.0]);
        let parts = vec![
            CategoryDictionary {
                category: "a".into(),
                atoms: Dict::from_atoms(3, f.clone()).unwrap(),
            },
            CategoryDictionary {
                category: "background".into(),
                atoms: Dict::from_atoms(3, unit(vec![1.0, -2.0, 1.0])).unwrap(),
            },
        ];
        let global = GlobalDictionary::build(&parts).unwrap();
        let codes =
            code_all_categories(&f, &[&parts[0].atoms, &parts[1].atoms], 0.15).unwrap();
        let z = category_aware_code(&f, &global, &codes, 0.15).unwrap();
        assert_eq!(z.support, vec![0]);
        assert!((z.coeffs[0] - 0.925).abs() < 1e-9);
    }

    #[test]
    fn kmeans_identical_points_single_atom() {
        let d = desc(unit(vec![1.0, 2.0, 2.0]));
        let pts = vec![d.clone(), d.clone(), d.clone()];
        let dict = kmeans_init(&pts, 1, 3, 10).unwrap();
        for (a, b) in dict.atom(0).iter().zip(&pts[0].values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_two_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = Vec::new();
        let centers = [vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 0.0]];
        for c in &centers {
            for _ in 0..20 {
                let v: Vec<f64> = c
                    .iter()
                    .map(|x| x + 0.01 * (rng.random::<f64>() - 0.5))
                    .collect();
                pts.push(desc(v));
            }
        }
        let dict = kmeans_init(&pts, 2, 5, 30).unwrap();
        // oracle: normalized per-cloud means
        for cloud in 0..2 {
            let mut mean = vec![0.0; 3];
            for p in &pts[cloud * 20..(cloud + 1) * 20] {
                linalg::axpy(1.0, &p.values, &mut mean);
            }
            for v in mean.iter_mut() {
                *v /= 20.0;
            }
            let mean = unit(mean);
            let matched = (0..2).any(|a| {
                dict.atom(a)
                    .iter()
                    .zip(&mean)
                    .all(|(x, y)| (x - y).abs() < 1e-6)
            });
            assert!(matched, "no atom matches cloud {}", cloud);
        }
    }

    #[test]
    fn kmeans_capacity_error() {
        let pts: Vec<Descriptor> = (0..5).map(|i| desc(vec![i as f64, 1.0])).collect();
        assert!(matches!(kmeans_init(&pts, 10, 0, 5), Err(Error::Capacity(_))));
    }

    #[test]
    fn kmeans_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Descriptor> = (0..40)
            .map(|_| desc((0..4).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let a = kmeans_init(&pts, 4, 9, 15).unwrap();
        let b = kmeans_init(&pts, 4, 9, 15).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn atom_norms_after_kmeans() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Descriptor> = (0..30)
            .map(|_| desc((0..6).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let dict = kmeans_init(&pts, 5, 1, 10).unwrap();
        for j in 0..dict.n_atoms() {
            assert!((linalg::norm2(dict.atom(j)) - 1.0).abs() < 1e-6);
        }
    }
}
