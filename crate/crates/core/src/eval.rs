//! Metrics — precision at the precision/recall equal point, IOU, pixel
//! accuracy — and the coding-speed benchmark comparing direct sparse coding
//! on the concatenated dictionary against the category-aware two-step path.

use crate::error::{Error, Result};
use crate::sparsecode::{
    build_sub_dictionary, category_aware_code, code_all_categories, concat_codes,
    feature_sign, CategoryDictionary, Dict, GlobalDictionary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use std::time::Instant;

pub const PR_THRESHOLDS: usize = 100;

/// Precision/recall at 100 thresholds `m/100, m = 1..=100`.
#[derive(Debug, Clone)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Sweep thresholds over saliency values against {-1,+1} ground truth.
/// Precision with an empty prediction set is defined as 1.
pub fn pr_curve(saliency: &[f64], gt: &[i8]) -> Result<PrCurve> {
    if saliency.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} saliency values vs {} labels",
            saliency.len(),
            gt.len()
        )));
    }
    let positives = gt.iter().filter(|&&l| l > 0).count();
    if positives == 0 {
        return Err(Error::Degenerate("no positive ground truth; recall undefined".into()));
    }
    let mut thresholds = Vec::with_capacity(PR_THRESHOLDS);
    let mut precision = Vec::with_capacity(PR_THRESHOLDS);
    let mut recall = Vec::with_capacity(PR_THRESHOLDS);
    for m in 1..=PR_THRESHOLDS {
        let tau = m as f64 / PR_THRESHOLDS as f64;
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &l) in saliency.iter().zip(gt) {
            if s >= tau {
                if l > 0 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        thresholds.push(tau);
        precision.push(if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 });
        recall.push(tp as f64 / positives as f64);
    }
    Ok(PrCurve { thresholds, precision, recall })
}

/// Precision where precision equals recall: exact sample if one exists,
/// linear interpolation across the sign change of (precision - recall)
/// otherwise, and the sample minimizing |precision - recall| when the curve
/// never crosses.
pub fn precision_at_eer(curve: &PrCurve) -> f64 {
    let d: Vec<f64> = curve
        .precision
        .iter()
        .zip(&curve.recall)
        .map(|(p, r)| p - r)
        .collect();
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            return curve.precision[i];
        }
    }
    for i in 0..d.len() - 1 {
        if d[i].signum() != d[i + 1].signum() {
            let alpha = d[i] / (d[i] - d[i + 1]);
            return curve.precision[i] + alpha * (curve.precision[i + 1] - curve.precision[i]);
        }
    }
    let best = d
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    curve.precision[best]
}

/// `TP / (TP + FP + FN)`, defined as 1 when all three counts are zero.
pub fn iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted vs {} ground-truth pixels",
            pred.len(),
            gt.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut missed = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => missed += 1,
            _ => {}
        }
    }
    let denom = tp + fp + missed;
    Ok(if denom == 0 { 1.0 } else { tp as f64 / denom as f64 })
}

/// Per-category fraction of that category's ground-truth pixels predicted
/// correctly, plus the mean over all categories present in the ground truth.
/// Label convention: 0 = background, n = category index + 1.
pub fn pixel_accuracy(pred: &[u8], gt: &[u8], n_categories: usize) -> Result<(Vec<f64>, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted vs {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    let classes = n_categories + 1; // background included
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &g) in pred.iter().zip(gt) {
        let g = g as usize;
        if g >= classes {
            return Err(Error::Data(format!("ground-truth label {} out of range", g)));
        }
        total[g] += 1;
        if p == g as u8 {
            correct[g] += 1;
        }
    }
    let per: Vec<f64> = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    let present: Vec<f64> = per
        .iter()
        .zip(&total)
        .filter(|(_, &t)| t > 0)
        .map(|(&p, _)| p)
        .collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((per, mean))
}

/// Timing comparison of the two coding routes.
#[derive(Debug, Clone)]
pub struct CodingBenchmark {
    /// Median wall time per feature, feature-sign on the full concatenation.
    pub direct_ns: f64,
    /// Median wall time per feature for the category-aware path: the
    /// slowest per-category solve (simulating parallel execution) plus the
    /// sub-dictionary solve.
    pub category_aware_ns: f64,
    pub speedup: f64,
    /// Mean sparsity of the direct global code.
    pub sparsity_direct: f64,
    /// Mean per-category code sparsity.
    pub sparsity_per_category: f64,
    /// Mean sparsity of the sub-dictionary code.
    pub sparsity_sub: f64,
    pub trials: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

/// Build `n_dicts` random unit-norm dictionaries and features, then time
/// direct coding on the concatenation against the two-step path.
pub fn coding_benchmark(
    n_categories: usize,
    atoms_per_dict: usize,
    feature_dim: usize,
    trials: usize,
    lambda: f64,
    seed: u64,
) -> Result<CodingBenchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_dicts = n_categories + 1; // background included
    let random_unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..feature_dim).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = crate::linalg::norm2(&v);
        v.into_iter().map(|x| x / n).collect()
    };
    let mut parts = Vec::with_capacity(n_dicts);
    for d in 0..n_dicts {
        let mut data = Vec::with_capacity(atoms_per_dict * feature_dim);
        for _ in 0..atoms_per_dict {
            data.extend(random_unit(&mut rng));
        }
        parts.push(CategoryDictionary {
            category: format!("cat{}", d),
            atoms: Dict::from_atoms(feature_dim, data)?,
        });
    }
    let global = GlobalDictionary::build(&parts)?;

    // features: sparse mixtures of atoms plus noise, unit-normalized
    let features: Vec<Vec<f64>> = (0..trials)
        .map(|_| {
            let mut f = vec![0.0; feature_dim];
            for _ in 0..4 {
                let atom = rng.random_range(0..global.total_atoms());
                let w = 0.3 + rng.random::<f64>();
                crate::linalg::axpy(w, global.dict.atom(atom), &mut f);
            }
            for v in f.iter_mut() {
                *v += 0.05 * (rng.random::<f64>() - 0.5);
            }
            let n = crate::linalg::norm2(&f);
            f.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let dicts: Vec<&Dict> = parts.iter().map(|p| &p.atoms).collect();
    let mut direct_times = Vec::with_capacity(trials);
    let mut cat_times = Vec::with_capacity(trials);
    let mut sp_direct = 0.0;
    let mut sp_cat = 0.0;
    let mut sp_sub = 0.0;
    for f in &features {
        let t0 = Instant::now();
        let z_full = feature_sign(black_box(f), &global.dict, lambda)?;
        direct_times.push(t0.elapsed().as_nanos() as f64);
        sp_direct += z_full.sparsity() as f64;

        // per-category solves timed individually; parallel cost = max
        let mut codes = Vec::with_capacity(n_dicts);
        let mut slowest = 0.0f64;
        for d in &dicts {
            let t1 = Instant::now();
            let code = feature_sign(black_box(f), d, lambda)?;
            slowest = slowest.max(t1.elapsed().as_nanos() as f64);
            codes.push(code);
        }
        sp_cat += codes.iter().map(|c| c.sparsity()).sum::<usize>() as f64
            / n_dicts as f64;
        let t2 = Instant::now();
        let z = category_aware_code(black_box(f), &global, &codes, lambda)?;
        let sub_time = t2.elapsed().as_nanos() as f64;
        cat_times.push(slowest + sub_time);
        sp_sub += z.sparsity() as f64;
        black_box(&z);
    }

    let direct_ns = median(direct_times);
    let category_aware_ns = median(cat_times);
    Ok(CodingBenchmark {
        direct_ns,
        category_aware_ns,
        speedup: direct_ns / category_aware_ns,
        sparsity_direct: sp_direct / trials as f64,
        sparsity_per_category: sp_cat / trials as f64,
        sparsity_sub: sp_sub / trials as f64,
        trials,
    })
}

/// Sanity statistics used by benchmark reporting: measured sparsities must
/// agree with direct inspection of the codes.
pub fn sparsity_report(
    f: &[f64],
    global: &GlobalDictionary,
    dicts: &[&Dict],
    lambda: f64,
) -> Result<(usize, Vec<usize>, usize)> {
    let z_full = feature_sign(f, &global.dict, lambda)?;
    let codes = code_all_categories(f, dicts, lambda)?;
    let per: Vec<usize> = codes.iter().map(|c| c.sparsity()).collect();
    let z_con = concat_codes(&codes, global)?;
    let (sub, _) = build_sub_dictionary(&z_con, global);
    let s_sub = if sub.n_atoms() == 0 {
        0
    } else {
        feature_sign(f, &sub, lambda)?.sparsity()
    };
    Ok((z_full.sparsity(), per, s_sub))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pr_perfect_map() {
        let s = vec![1.0, 0.0, 1.0, 0.0];
        let gt = vec![1, -1, 1, -1];
        let c = pr_curve(&s, &gt).unwrap();
        for i in 0..PR_THRESHOLDS {
            assert_eq!(c.precision[i], 1.0);
            assert_eq!(c.recall[i], 1.0);
        }
        assert_eq!(precision_at_eer(&c), 1.0);
    }

    #[test]
    fn pr_all_zero_map() {
        let s = vec![0.0; 4];
        let gt = vec![1, -1, 1, -1];
        let c = pr_curve(&s, &gt).unwrap();
        assert!(c.recall.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn pr_no_positives_is_error() {
        assert!(matches!(
            pr_curve(&[0.5, 0.5], &[-1, -1]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn eer_hand_case() {
        // s=(0.9,0.7,0.4,0.2), gt=(+,-,+,-): tau=0.5 gives P=R=0.5 exactly
        let c = pr_curve(&[0.9, 0.7, 0.4, 0.2], &[1, -1, 1, -1]).unwrap();
        assert!((precision_at_eer(&c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eer_constant_map_equals_positive_fraction() {
        // constant 1.0: P = p and R = 1 at every threshold, no crossing, so
        // the minimum-|P-R| sample is returned
        let s = vec![1.0; 8];
        let gt = vec![1, 1, -1, -1, -1, -1, -1, -1];
        let c = pr_curve(&s, &gt).unwrap();
        assert!((precision_at_eer(&c) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn eer_within_precision_range() {
        let s = vec![0.9, 0.8, 0.75, 0.3, 0.6, 0.1, 0.45, 0.2];
        let gt = vec![1, -1, 1, 1, -1, -1, 1, -1];
        let c = pr_curve(&s, &gt).unwrap();
        let e = precision_at_eer(&c);
        let lo = c.precision.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.precision.iter().cloned().fold(0.0f64, f64::max);
        assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
    }

    #[test]
    fn recall_monotone_in_threshold() {
        let s = vec![0.13, 0.92, 0.4, 0.77, 0.51, 0.66];
        let gt = vec![1, 1, -1, 1, -1, 1];
        let c = pr_curve(&s, &gt).unwrap();
        for i in 1..c.recall.len() {
            assert!(c.recall[i] <= c.recall[i - 1] + 1e-12);
        }
    }

    #[test]
    fn iou_cases() {
        let a = vec![true, true, false, false];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let b = vec![false, false, true, true];
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        // TP=FP=FN=10 -> 1/3
        let mut pred = vec![false; 30];
        let mut gt = vec![false; 30];
        for i in 0..20 {
            pred[i] = true;
        }
        for i in 10..30 {
            gt[i] = true;
        }
        assert!((iou(&pred, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // symmetry of the denominator
        assert_eq!(iou(&pred, &gt).unwrap(), iou(&gt, &pred).unwrap());
        // empty masks
        assert_eq!(iou(&[false, false], &[false, false]).unwrap(), 1.0);
    }

    #[test]
    fn pixel_accuracy_cases() {
        let gt = vec![0, 0, 1, 1, 2];
        let (per, mean) = pixel_accuracy(&gt, &gt, 2).unwrap();
        assert_eq!(per, vec![1.0, 1.0, 1.0]);
        assert_eq!(mean, 1.0);

        let all_bg = vec![0, 0, 0, 0, 0];
        let (per, mean) = pixel_accuracy(&all_bg, &gt, 2).unwrap();
        assert_eq!(per, vec![1.0, 0.0, 0.0]);
        assert!((mean - 1.0 / 3.0).abs() < 1e-12);

        // 3-pixel hand case: gt = [1,1,0], pred = [1,0,0]
        let (per, mean) = pixel_accuracy(&[1, 0, 0], &[1, 1, 0], 1).unwrap();
        assert_eq!(per, vec![1.0, 0.5]);
        assert!((mean - 0.75).abs() < 1e-12);

        assert!(pixel_accuracy(&[0], &[0, 1], 1).is_err());
    }

    #[test]
    fn benchmark_smoke() {
        let b = coding_benchmark(1, 8, 16, 20, 0.15, 3).unwrap();
        assert!(b.direct_ns > 0.0);
        assert!(b.category_aware_ns > 0.0);
        assert_eq!(b.trials, 20);
    }
}
