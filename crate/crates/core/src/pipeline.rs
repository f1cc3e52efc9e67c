//! End-to-end orchestration: dataset loading and splits, initial saliency
//! training, classifier-guided model updates, the saliency-weighted
//! classifier, inference, refinement, and patch-to-pixel conversion.
//!
//! Training follows a two-stage schedule. Stage one fits each category's
//! dictionary (k-means) and CRF weights (patch-level SVM init, then
//! `initial_iters` epochs of max-margin updates) on the Train1 half. Stage
//! two trains an image classifier on category-aware codes, validates on the
//! held-out half, and reruns the max-margin update on every misclassified
//! image's category, swapping the halves between rounds. The final
//! classifier is retrained on saliency-weighted pooled vectors from all
//! training images and its confidences rescale the inferred maps.

use crate::cli::Manifest;
use crate::crf::{self, CrfModel};
use crate::error::{Error, Result};
use crate::eval::{pr_curve, precision_at_eer};
use crate::imgfeat::{
    build_patch_grid, grid_descriptors, label_patches, Descriptor, GrayImage, Mask,
    PatchGrid,
};
use crate::pyramid::{
    assign_blocks, block_saliency, concat_normalize, max_pool, saliency_weighted_pool,
};
use crate::sparsecode::{
    category_aware_code, feature_sign, kmeans_init, CategoryDictionary, Dict,
    GlobalDictionary, SparseCode,
};
use crate::svm::{one_vs_rest_train, svm_train, SvmModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const BACKGROUND_NAME: &str = "background";

/// All knobs of the training schedule, with the defaults used throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub initial_iters: usize,
    pub feedback_rounds: usize,
    pub rho0: f64,
    pub lambda: f64,
    pub atoms_per_category: usize,
    pub atoms_background: usize,
    pub nu: usize,
    pub label_frac: f64,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub svm_cost_patch: f64,
    pub svm_cost_image: f64,
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            initial_iters: 10,
            feedback_rounds: 2,
            rho0: 1e-3,
            lambda: 0.15,
            atoms_per_category: 64,
            atoms_background: 64,
            nu: 2,
            label_frac: 0.25,
            seed: 0,
            kmeans_iters: 20,
            svm_cost_patch: 1.0,
            svm_cost_image: 10.0,
            patch_size: 64,
            stride: 16,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.rho0 > 0.0
            && self.lambda > 0.0
            && self.label_frac > 0.0
            && self.svm_cost_patch > 0.0
            && self.svm_cost_image > 0.0
            && self.atoms_per_category > 0
            && self.atoms_background > 0
            && self.nu > 0
            && self.patch_size > 0
            && self.stride > 0;
        if !positive {
            return Err(Error::Data("config values must be positive".into()));
        }
        if self.patch_size < self.stride {
            return Err(Error::Data("patch_size must be >= stride".into()));
        }
        Ok(())
    }

    /// Round float fields onto the f32 grid used by the model container.
    pub fn canonicalize(&mut self) {
        self.rho0 = self.rho0 as f32 as f64;
        self.lambda = self.lambda as f32 as f64;
        self.label_frac = self.label_frac as f32 as f64;
        self.svm_cost_patch = self.svm_cost_patch as f32 as f64;
        self.svm_cost_image = self.svm_cost_image as f32 as f64;
    }
}

/// Category list and the label arity observed in the training manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetProfile {
    pub categories: Vec<String>,
    pub multi_label: bool,
    pub max_objects: usize,
}

impl DatasetProfile {
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let mut categories: Vec<String> = manifest
            .rows
            .iter()
            .flat_map(|r| r.labels.iter().cloned())
            .collect();
        categories.sort();
        categories.dedup();
        if categories.is_empty() {
            return Err(Error::Data("manifest declares no categories".into()));
        }
        let max_objects = manifest
            .rows
            .iter()
            .map(|r| r.labels.len())
            .max()
            .unwrap_or(0)
            .max(1);
        Ok(Self { categories, multi_label: max_objects > 1, max_objects })
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }
}

/// One loaded image with its grid, descriptors and per-category patch labels.
#[derive(Debug, Clone)]
pub struct ImageData {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub grid: PatchGrid,
    pub descriptors: Vec<Descriptor>,
    /// Image-level presence per category.
    pub present: Vec<bool>,
    /// Patch labels per category; all -1 when the category is absent or the
    /// image carries no mask.
    pub patch_labels: Vec<Vec<i8>>,
    pub has_mask: bool,
    pub mask: Option<Mask>,
}

impl ImageData {
    pub fn is_background(&self) -> bool {
        self.present.iter().all(|&p| !p)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub profile: DatasetProfile,
    pub images: Vec<ImageData>,
}

/// Load, describe, and label every manifest row against `profile`
/// categories (use [`DatasetProfile::from_manifest`] for training data).
pub fn load_dataset(
    manifest: &Manifest,
    profile: &DatasetProfile,
    config: &TrainingConfig,
) -> Result<Dataset> {
    config.validate()?;
    for row in &manifest.rows {
        for l in &row.labels {
            if !profile.categories.contains(l) {
                return Err(Error::Data(format!(
                    "label '{}' not in the declared category set",
                    l
                )));
            }
        }
    }
    let images: Result<Vec<ImageData>> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let img = GrayImage::load(&row.image)?;
            let grid = build_patch_grid(img.width, img.height, config.patch_size, config.stride)?;
            let descriptors = grid_descriptors(&img, &grid)?;
            let present: Vec<bool> = profile
                .categories
                .iter()
                .map(|c| row.labels.contains(c))
                .collect();
            let mask = match &row.mask {
                Some(path) => Some(Mask::load(path)?),
                None => None,
            };
            let mut patch_labels = Vec::with_capacity(profile.n_categories());
            for &p in &present {
                if p {
                    if let Some(m) = &mask {
                        patch_labels.push(
                            label_patches(&grid, m, img.width, img.height, config.label_frac)?
                                .labels,
                        );
                        continue;
                    }
                }
                patch_labels.push(vec![-1i8; grid.patch_count()]);
            }
            let name = row
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            Ok(ImageData {
                name,
                width: img.width,
                height: img.height,
                grid,
                descriptors,
                present,
                patch_labels,
                has_mask: mask.is_some(),
                mask,
            })
        })
        .collect();
    Ok(Dataset { profile: profile.clone(), images: images? })
}

/// Index split of the training set. `train1` doubles as the stage-two
/// training half (the paper's T2a) and `train2` as the validation half
/// (T2b); the guided-update rounds swap them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train1: Vec<usize>,
    pub train2: Vec<usize>,
}

/// Deterministic per-group shuffle and split. Images group by their first
/// present category (background images form their own group), every group
/// contributes `train1_frac` of its images to `train1`.
pub fn split_dataset(dataset: &Dataset, seed: u64, train1_frac: f64) -> Result<Split> {
    let n_cat = dataset.profile.n_categories();
    for (c, name) in dataset.profile.categories.iter().enumerate() {
        if !dataset.images.iter().any(|img| img.present[c]) {
            return Err(Error::Capacity(format!("category '{}' has no positive images", name)));
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_cat + 1];
    for (i, img) in dataset.images.iter().enumerate() {
        match img.present.iter().position(|&p| p) {
            Some(c) => groups[c].push(i),
            None => groups[n_cat].push(i),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train1 = Vec::new();
    let mut train2 = Vec::new();
    for group in groups.iter_mut() {
        group.shuffle(&mut rng);
        let n1 = (group.len() as f64 * train1_frac).round() as usize;
        train1.extend_from_slice(&group[..n1]);
        train2.extend_from_slice(&group[n1..]);
    }
    train1.sort_unstable();
    train2.sort_unstable();
    Ok(Split { train1, train2 })
}

/// The persisted artifact: per-category saliency models, the background
/// dictionary, and the saliency-weighted image classifiers.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub config: TrainingConfig,
    pub profile: DatasetProfile,
    pub dictionaries: Vec<CategoryDictionary>,
    pub crf_models: Vec<CrfModel>,
    pub background: CategoryDictionary,
    /// Saliency-weighted one-vs-rest classifiers; empty until stage three.
    pub classifiers: Vec<SvmModel>,
}

impl JointModel {
    /// Current concatenation (categories in order, background last).
    pub fn global(&self) -> Result<GlobalDictionary> {
        let mut parts = self.dictionaries.clone();
        parts.push(self.background.clone());
        GlobalDictionary::build(&parts)
    }

    /// Round every parameter onto the f32 grid of the model container so a
    /// save/load cycle reproduces the model bit for bit.
    pub fn canonicalize(&mut self) {
        let round = |v: &mut f64| *v = *v as f32 as f64;
        self.config.canonicalize();
        for d in self.dictionaries.iter_mut() {
            for j in 0..d.atoms.n_atoms() {
                d.atoms.atom_mut(j).iter_mut().for_each(&round);
            }
        }
        for j in 0..self.background.atoms.n_atoms() {
            self.background.atoms.atom_mut(j).iter_mut().for_each(&round);
        }
        for m in self.crf_models.iter_mut() {
            m.weights.iter_mut().for_each(&round);
            round(&mut m.gamma);
        }
        for c in self.classifiers.iter_mut() {
            c.weights.iter_mut().for_each(&round);
            round(&mut c.bias);
            round(&mut c.cost);
        }
    }
}

fn category_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Feature-sign codes of every descriptor against one dictionary.
pub fn codes_on_dict(
    descriptors: &[Descriptor],
    dict: &Dict,
    lambda: f64,
) -> Result<Vec<SparseCode>> {
    descriptors
        .par_iter()
        .map(|d| feature_sign(&d.values, dict, lambda))
        .collect()
}

/// One max-margin update cycle on a single image for one category: codes on
/// the current dictionary, loss-augmented MAP, gradients, step.
fn update_category_on_image(
    model: &mut CrfModel,
    dict: &mut Dict,
    img: &ImageData,
    y_gt: &[i8],
    lambda: f64,
    rho0: f64,
) -> Result<()> {
    let codes = codes_on_dict(&img.descriptors, dict, lambda)?;
    let y_hat = crf::loss_augmented_map(&codes, model, &y_gt.to_vec(), &img.grid)?;
    let gw = crf::grad_w(&y_hat, &y_gt.to_vec(), &codes);
    let features: Vec<Vec<f64>> = img.descriptors.iter().map(|d| d.values.clone()).collect();
    let gd = crf::grad_d(&y_hat, &y_gt.to_vec(), &codes, model, dict, &features)?;
    crf::apply_update(model, dict, &gw, &gd, rho0)
}

/// Stage one: dictionaries from k-means, CRF weights from a patch-level
/// SVM, then `initial_iters` epochs of per-image max-margin updates over
/// Train1. The background dictionary comes from background-image patches
/// (falling back to all-negative patches when the set has no background
/// images). Classifiers are left empty.
pub fn train_initial(
    dataset: &Dataset,
    train1: &[usize],
    config: &TrainingConfig,
) -> Result<JointModel> {
    config.validate()?;
    let profile = dataset.profile.clone();
    let n_cat = profile.n_categories();

    let mut dictionaries = Vec::with_capacity(n_cat);
    let mut crf_models = Vec::with_capacity(n_cat);
    for c in 0..n_cat {
        // k-means on positive, non-empty descriptors
        let positives: Vec<Descriptor> = train1
            .iter()
            .flat_map(|&i| {
                let img = &dataset.images[i];
                img.descriptors
                    .iter()
                    .zip(&img.patch_labels[c])
                    .filter(|(d, &l)| l > 0 && !d.is_zero())
                    .map(|(d, _)| d.clone())
                    .collect::<Vec<_>>()
            })
            .collect();
        let atoms = kmeans_init(
            &positives,
            config.atoms_per_category,
            category_seed(config.seed, c),
            config.kmeans_iters,
        )?;
        let dict = CategoryDictionary { category: profile.categories[c].clone(), atoms };

        // patch-level SVM initializes the node weights
        let mut examples = Vec::new();
        for &i in train1 {
            let img = &dataset.images[i];
            let codes = codes_on_dict(&img.descriptors, &dict.atoms, config.lambda)?;
            for (code, &label) in codes.iter().zip(&img.patch_labels[c]) {
                examples.push((code.to_dense(), label));
            }
        }
        let svm = svm_train(&examples, config.svm_cost_patch)?;
        let mut weights = svm.weights;
        weights.push(svm.bias);
        dictionaries.push(dict);
        crf_models.push(CrfModel::new(profile.categories[c].clone(), weights));
    }

    // background dictionary
    let mut bg_desc: Vec<Descriptor> = train1
        .iter()
        .filter(|&&i| dataset.images[i].is_background())
        .flat_map(|&i| {
            dataset.images[i]
                .descriptors
                .iter()
                .filter(|d| !d.is_zero())
                .cloned()
                .collect::<Vec<_>>()
        })
        .collect();
    if bg_desc.len() < config.atoms_background {
        bg_desc = train1
            .iter()
            .flat_map(|&i| {
                let img = &dataset.images[i];
                img.descriptors
                    .iter()
                    .enumerate()
                    .filter(|(p, d)| {
                        !d.is_zero() && img.patch_labels.iter().all(|l| l[*p] < 0)
                    })
                    .map(|(_, d)| d.clone())
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    let background = CategoryDictionary {
        category: BACKGROUND_NAME.into(),
        atoms: kmeans_init(
            &bg_desc,
            config.atoms_background,
            category_seed(config.seed, n_cat),
            config.kmeans_iters,
        )?,
    };

    let mut model = JointModel {
        config: config.clone(),
        profile,
        dictionaries,
        crf_models,
        background,
        classifiers: Vec::new(),
    };

    for _epoch in 0..config.initial_iters {
        for c in 0..n_cat {
            for &i in train1 {
                let img = &dataset.images[i];
                let y_gt = img.patch_labels[c].clone();
                let mut crf_model = model.crf_models[c].clone();
                let mut dict = model.dictionaries[c].atoms.clone();
                update_category_on_image(
                    &mut crf_model,
                    &mut dict,
                    img,
                    &y_gt,
                    config.lambda,
                    config.rho0,
                )?;
                model.crf_models[c] = crf_model;
                model.dictionaries[c].atoms = dict;
            }
        }
    }
    Ok(model)
}

/// Per-patch codings of one image against the full model.
struct PatchCodings {
    /// Codes per dictionary block (categories then background), per patch.
    per_block: Vec<Vec<SparseCode>>,
    /// Category-aware codes over the concatenation, per patch.
    aware: Vec<SparseCode>,
}

fn code_patches(
    model: &JointModel,
    global: &GlobalDictionary,
    img: &ImageData,
) -> Result<PatchCodings> {
    let lambda = model.config.lambda;
    let dicts: Vec<&Dict> = model
        .dictionaries
        .iter()
        .map(|d| &d.atoms)
        .chain(std::iter::once(&model.background.atoms))
        .collect();
    let per_patch: Result<Vec<(Vec<SparseCode>, SparseCode)>> = img
        .descriptors
        .par_iter()
        .map(|d| {
            let codes: Result<Vec<SparseCode>> =
                dicts.iter().map(|dict| feature_sign(&d.values, dict, lambda)).collect();
            let codes = codes?;
            let aware = category_aware_code(&d.values, global, &codes, lambda)?;
            Ok((codes, aware))
        })
        .collect();
    let per_patch = per_patch?;
    let n_blocks = dicts.len();
    let mut per_block = vec![Vec::with_capacity(per_patch.len()); n_blocks];
    let mut aware = Vec::with_capacity(per_patch.len());
    for (codes, a) in per_patch {
        for (b, code) in codes.into_iter().enumerate() {
            per_block[b].push(code);
        }
        aware.push(a);
    }
    Ok(PatchCodings { per_block, aware })
}

/// Unweighted ScSPM image vector from category-aware codes.
fn image_vector_plain(
    model: &JointModel,
    global: &GlobalDictionary,
    img: &ImageData,
) -> Result<Vec<f64>> {
    let codings = code_patches(model, global, img)?;
    let layout = assign_blocks(&img.grid, img.width, img.height)?;
    let pooled = max_pool(&codings.aware, &layout)?;
    concat_normalize(&pooled)
}

/// Saliency-weighted image vector plus the per-category maps behind it.
fn image_vector_weighted(
    model: &JointModel,
    global: &GlobalDictionary,
    img: &ImageData,
) -> Result<(Vec<f64>, Vec<SaliencyMap>)> {
    let codings = code_patches(model, global, img)?;
    let layout = assign_blocks(&img.grid, img.width, img.height)?;
    let pooled = max_pool(&codings.aware, &layout)?;
    let mut maps = Vec::with_capacity(model.crf_models.len());
    for (c, crf_model) in model.crf_models.iter().enumerate() {
        let marginals = crf::infer_marginals(&codings.per_block[c], crf_model, &img.grid)?;
        maps.push(SaliencyMap {
            category: model.profile.categories[c].clone(),
            rows: img.grid.rows,
            cols: img.grid.cols,
            values: marginals.probs,
            weight: 1.0,
        });
    }
    let map_values: Vec<Vec<f64>> = maps.iter().map(|m| m.values.clone()).collect();
    let bs = block_saliency(&map_values, &layout, model.config.nu)?;
    let weighted = saliency_weighted_pool(&pooled, &bs)?;
    Ok((concat_normalize(&weighted)?, maps))
}

fn presence_labels(dataset: &Dataset, indices: &[usize]) -> Vec<Vec<i8>> {
    (0..dataset.profile.n_categories())
        .map(|c| {
            indices
                .iter()
                .map(|&i| if dataset.images[i].present[c] { 1i8 } else { -1 })
                .collect()
        })
        .collect()
}

/// What the guided-update stage did, round by round.
#[derive(Debug, Clone, Default)]
pub struct GuidedUpdateReport {
    /// Per round: (category index, image index) pairs that triggered an
    /// update, in application order.
    pub rounds: Vec<Vec<(usize, usize)>>,
}

/// Stage two: per round, train an image classifier on one half
/// (category-aware codes, plain pooling), validate on the other, and rerun
/// the max-margin update for every misclassified image on its own
/// category's model. Halves swap between rounds.
pub fn classifier_guided_update(
    model: &mut JointModel,
    dataset: &Dataset,
    t2a: &[usize],
    t2b: &[usize],
) -> Result<GuidedUpdateReport> {
    let mut report = GuidedUpdateReport::default();
    let n_cat = model.profile.n_categories();
    for round in 0..model.config.feedback_rounds {
        let (train_half, val_half) = if round % 2 == 0 { (t2a, t2b) } else { (t2b, t2a) };
        let global = model.global()?;
        let features: Result<Vec<Vec<f64>>> = train_half
            .iter()
            .map(|&i| image_vector_plain(model, &global, &dataset.images[i]))
            .collect();
        let labels = presence_labels(dataset, train_half);
        let classifiers = one_vs_rest_train(&features?, &labels, model.config.svm_cost_image)?;

        // collect misclassifications first, then update
        let mut updates: Vec<(usize, usize)> = Vec::new();
        for &i in val_half {
            let img = &dataset.images[i];
            let x = image_vector_plain(model, &global, img)?;
            let conf: Result<Vec<f64>> =
                classifiers.iter().map(|m| m.confidence(&x)).collect();
            let conf = conf?;
            if model.profile.multi_label {
                for c in 0..n_cat {
                    if img.present[c] && conf[c] <= 0.0 {
                        updates.push((c, i));
                    }
                }
            } else {
                if img.is_background() {
                    continue;
                }
                let truth = img.present.iter().position(|&p| p).unwrap();
                let predicted = argmax(&conf);
                if predicted != truth {
                    updates.push((truth, i));
                }
            }
        }
        for &(c, i) in &updates {
            let img = &dataset.images[i];
            let y_gt = img.patch_labels[c].clone();
            let mut crf_model = model.crf_models[c].clone();
            let mut dict = model.dictionaries[c].atoms.clone();
            update_category_on_image(
                &mut crf_model,
                &mut dict,
                img,
                &y_gt,
                model.config.lambda,
                model.config.rho0,
            )?;
            model.crf_models[c] = crf_model;
            model.dictionaries[c].atoms = dict;
        }
        report.rounds.push(updates);
    }
    Ok(report)
}

/// Stage three: saliency-weighted pooled vectors over all training images
/// feed the final one-vs-rest classifiers stored in the model.
pub fn train_weighted_classifier(
    model: &mut JointModel,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<()> {
    let global = model.global()?;
    let features: Result<Vec<Vec<f64>>> = indices
        .par_iter()
        .map(|&i| image_vector_weighted(model, &global, &dataset.images[i]).map(|(x, _)| x))
        .collect();
    let features = features?;
    if features.iter().all(|x| x.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate(
            "all saliency-weighted image vectors are zero".into(),
        ));
    }
    let labels = presence_labels(dataset, indices);
    model.classifiers = one_vs_rest_train(&features, &labels, model.config.svm_cost_image)?;
    Ok(())
}

/// Full training schedule; the returned model is canonicalized (f32-exact
/// parameters) and ready to persist.
pub fn train_full(dataset: &Dataset, config: &TrainingConfig) -> Result<(JointModel, Split)> {
    if let Some(img) = dataset
        .images
        .iter()
        .find(|img| !img.is_background() && !img.has_mask)
    {
        return Err(Error::Data(format!(
            "training image '{}' has labels but no mask",
            img.name
        )));
    }
    let split = split_dataset(dataset, config.seed, 0.5)?;
    let mut model = train_initial(dataset, &split.train1, config)?;
    classifier_guided_update(&mut model, dataset, &split.train1, &split.train2)?;
    let all: Vec<usize> = {
        let mut v = split.train1.clone();
        v.extend_from_slice(&split.train2);
        v.sort_unstable();
        v
    };
    train_weighted_classifier(&mut model, dataset, &all)?;
    model.canonicalize();
    Ok((model, split))
}

/// Per-patch probability of object presence for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub category: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Refinement weight already applied to `values` (1 = unrefined).
    pub weight: f64,
}

/// Saliency of one category on one image: codes on that category's
/// dictionary, then sum-product marginals.
pub fn infer_saliency(
    model: &JointModel,
    img: &ImageData,
    category: usize,
) -> Result<SaliencyMap> {
    let codes = codes_on_dict(
        &img.descriptors,
        &model.dictionaries[category].atoms,
        model.config.lambda,
    )?;
    let marginals = crf::infer_marginals(&codes, &model.crf_models[category], &img.grid)?;
    Ok(SaliencyMap {
        category: model.profile.categories[category].clone(),
        rows: img.grid.rows,
        cols: img.grid.cols,
        values: marginals.probs,
        weight: 1.0,
    })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Classifier-confidence refinement weights, one per category.
///
/// Single-label data: 1 for the top-confidence category, 0 elsewhere.
/// Multi-label data: rank confidences descending; ranks 1-2 get 1, ranks
/// beyond `max_objects` get 0, and ranks in between get the min-max
/// rescaled confidence of that range, clipped to [0, 1].
pub fn refinement_weights(confidences: &[f64], profile: &DatasetProfile) -> Vec<f64> {
    let n = confidences.len();
    if !profile.multi_label {
        let mut w = vec![0.0; n];
        if n > 0 {
            w[argmax(confidences)] = 1.0;
        }
        return w;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        rank[idx] = pos + 1;
    }
    let scale_range: Vec<f64> = order
        .iter()
        .filter(|&&idx| rank[idx] >= 3 && rank[idx] <= profile.max_objects)
        .map(|&idx| confidences[idx])
        .collect();
    let (lo, hi) = (
        scale_range.iter().cloned().fold(f64::INFINITY, f64::min),
        scale_range.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    (0..n)
        .map(|c| {
            let r = rank[c];
            if r <= 2 {
                1.0
            } else if r > profile.max_objects {
                0.0
            } else if hi - lo < 1e-12 {
                1.0
            } else {
                ((confidences[c] - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Scale a map by a refinement weight in [0, 1].
pub fn refine(map: &SaliencyMap, weight: f64) -> SaliencyMap {
    SaliencyMap {
        category: map.category.clone(),
        rows: map.rows,
        cols: map.cols,
        values: map.values.iter().map(|v| v * weight).collect(),
        weight: map.weight * weight,
    }
}

/// Everything the model says about one image.
#[derive(Debug, Clone)]
pub struct ImageAnalysis {
    /// Unrefined per-category maps.
    pub maps: Vec<SaliencyMap>,
    /// Saliency-weighted classifier confidences.
    pub confidences: Vec<f64>,
    /// Refinement weight per category.
    pub weights: Vec<f64>,
    pub refined: Vec<SaliencyMap>,
    /// Presence decision per category: argmax for single-label data, the
    /// confidence sign otherwise.
    pub predicted: Vec<bool>,
}

/// Run the full inference path: maps, weighted classification, refinement.
pub fn analyze_image(model: &JointModel, img: &ImageData) -> Result<ImageAnalysis> {
    if model.classifiers.is_empty() {
        return Err(Error::Degenerate(
            "model has no trained saliency-weighted classifier".into(),
        ));
    }
    let global = model.global()?;
    let (x, maps) = image_vector_weighted(model, &global, img)?;
    let confidences: Result<Vec<f64>> =
        model.classifiers.iter().map(|m| m.confidence(&x)).collect();
    let confidences = confidences?;
    let weights = refinement_weights(&confidences, &model.profile);
    let refined: Vec<SaliencyMap> =
        maps.iter().zip(&weights).map(|(m, &w)| refine(m, w)).collect();
    let predicted = if model.profile.multi_label {
        confidences.iter().map(|&c| c > 0.0).collect()
    } else {
        let top = argmax(&confidences);
        (0..confidences.len()).map(|c| c == top).collect()
    };
    Ok(ImageAnalysis { maps, confidences, weights, refined, predicted })
}

/// Patch map to pixel map: each pixel averages the saliency of every patch
/// covering it; pixels outside all patches copy the nearest patch's value.
pub fn patch_to_pixel(
    values: &[f64],
    grid: &PatchGrid,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let mut sum = vec![0.0f64; width * height];
    let mut count = vec![0u32; width * height];
    for p in 0..grid.patch_count() {
        let (row, col) = (p / grid.cols, p % grid.cols);
        let (x0, y0) = grid.origin(row, col);
        for y in y0..(y0 + grid.patch_size).min(height) {
            let base = y * width;
            for x in x0..(x0 + grid.patch_size).min(width) {
                sum[base + x] += values[p];
                count[base + x] += 1;
            }
        }
    }
    let mut out = vec![0.0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if count[i] > 0 {
                out[i] = sum[i] / count[i] as f64;
            } else {
                // nearest patch center, ties to the lowest patch index
                let mut best = 0usize;
                let mut best_d = u64::MAX;
                for p in 0..grid.patch_count() {
                    let (cx, cy) = grid.center(p);
                    let dx = cx as i64 - x as i64;
                    let dy = cy as i64 - y as i64;
                    let d = (dx * dx + dy * dy) as u64;
                    if d < best_d {
                        best_d = d;
                        best = p;
                    }
                }
                out[i] = values[best];
            }
        }
    }
    out
}

/// Assign each pixel to the category with the highest saliency when that
/// maximum reaches `threshold`, and to background (0) otherwise. Ties pick
/// the lowest category index; the returned labels are category index + 1.
pub fn segment(pixel_maps: &[Vec<f64>], threshold: f64) -> Result<Vec<u8>> {
    let len = pixel_maps.first().map(|m| m.len()).unwrap_or(0);
    if pixel_maps.iter().any(|m| m.len() != len) {
        return Err(Error::Dimension("pixel maps disagree on size".into()));
    }
    let mut out = vec![0u8; len];
    for i in 0..len {
        let mut best_c = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (c, m) in pixel_maps.iter().enumerate() {
            if m[i] > best_v {
                best_v = m[i];
                best_c = c;
            }
        }
        if best_v >= threshold {
            out[i] = (best_c + 1) as u8;
        }
    }
    Ok(out)
}

/// Pooled patch-level precision at EER per category over a set of images,
/// for both unrefined and classifier-refined maps.
#[derive(Debug, Clone)]
pub struct SaliencyScore {
    pub category: String,
    pub eer_precision: f64,
    pub eer_precision_refined: f64,
    /// Mean of per-image EER precision over images with positive patches.
    pub per_image_mean: f64,
}

pub fn evaluate_saliency(
    model: &JointModel,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<SaliencyScore>> {
    let analyses: Result<Vec<ImageAnalysis>> = indices
        .iter()
        .map(|&i| analyze_image(model, &dataset.images[i]))
        .collect();
    let analyses = analyses?;
    let n_cat = model.profile.n_categories();
    let mut scores = Vec::with_capacity(n_cat);
    for c in 0..n_cat {
        let mut pooled_s = Vec::new();
        let mut pooled_refined = Vec::new();
        let mut pooled_gt: Vec<i8> = Vec::new();
        let mut per_image = Vec::new();
        for (a, &i) in analyses.iter().zip(indices) {
            let img = &dataset.images[i];
            pooled_s.extend_from_slice(&a.maps[c].values);
            pooled_refined.extend_from_slice(&a.refined[c].values);
            pooled_gt.extend_from_slice(&img.patch_labels[c]);
            if img.patch_labels[c].iter().any(|&l| l > 0) {
                let curve = pr_curve(&a.maps[c].values, &img.patch_labels[c])?;
                per_image.push(precision_at_eer(&curve));
            }
        }
        let curve = pr_curve(&pooled_s, &pooled_gt)?;
        let refined_curve = pr_curve(&pooled_refined, &pooled_gt)?;
        scores.push(SaliencyScore {
            category: model.profile.categories[c].clone(),
            eer_precision: precision_at_eer(&curve),
            eer_precision_refined: precision_at_eer(&refined_curve),
            per_image_mean: if per_image.is_empty() {
                0.0
            } else {
                per_image.iter().sum::<f64>() / per_image.len() as f64
            },
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(names: &[&str], multi: bool, max_objects: usize) -> DatasetProfile {
        DatasetProfile {
            categories: names.iter().map(|s| s.to_string()).collect(),
            multi_label: multi,
            max_objects,
        }
    }

    #[test]
    fn refinement_weights_single_label() {
        let p = profile(&["a", "b", "c"], false, 1);
        assert_eq!(refinement_weights(&[0.9, 0.2, -0.1], &p), vec![1.0, 0.0, 0.0]);
        // tie goes to the lowest index
        assert_eq!(refinement_weights(&[0.5, 0.5, 0.1], &p), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn refinement_weights_multi_label_ranks() {
        let p = profile(&["a", "b", "c", "d", "e", "f"], true, 5);
        let conf = [0.9, 0.7, 0.5, 0.3, 0.1, -0.2];
        let w = refinement_weights(&conf, &p);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 1.0);
        // rank 6 > max_objects=5 -> 0
        assert_eq!(w[5], 0.0);
        // ranks 3..5 min-max rescaled over their confidences 0.5,0.3,0.1
        assert!((w[2] - 1.0).abs() < 1e-12);
        assert!((w[3] - 0.5).abs() < 1e-12);
        assert!((w[4] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_weights_rank_two_regardless_of_magnitude() {
        let p = profile(&["a", "b", "c"], true, 2);
        let w = refinement_weights(&[-5.0, -7.0, -9.0], &p);
        assert_eq!(w, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn refine_scales_values() {
        let map = SaliencyMap {
            category: "a".into(),
            rows: 1,
            cols: 2,
            values: vec![0.6, 0.2],
            weight: 1.0,
        };
        let r = refine(&map, 0.5);
        assert_eq!(r.values, vec![0.3, 0.1]);
        assert_eq!(r.weight, 0.5);
        let z = refine(&map, 0.0);
        assert!(z.values.iter().all(|&v| v == 0.0));
        let id = refine(&map, 1.0);
        assert_eq!(id.values, map.values);
    }

    #[test]
    fn patch_to_pixel_uniform_and_overlap() {
        let grid = build_patch_grid(80, 64, 64, 16).unwrap(); // 1 row x 2 cols
        assert_eq!((grid.rows, grid.cols), (1, 2));
        let uniform = patch_to_pixel(&[0.4, 0.4], &grid, 80, 64);
        assert!(uniform.iter().all(|&v| (v - 0.4).abs() < 1e-12));

        let two = patch_to_pixel(&[0.2, 0.8], &grid, 80, 64);
        // x < 16: only patch 0; 16 <= x < 64: both; x >= 64: only patch 1
        assert!((two[0] - 0.2).abs() < 1e-12);
        assert!((two[30] - 0.5).abs() < 1e-12);
        assert!((two[70] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn patch_to_pixel_single_patch_constant() {
        let grid = build_patch_grid(64, 64, 64, 16).unwrap();
        let m = patch_to_pixel(&[0.7], &grid, 64, 64);
        assert!(m.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn segment_rules() {
        let a = vec![0.9, 0.4, 0.45, 0.0];
        let b = vec![0.1, 0.45, 0.45, 0.0];
        let labels = segment(&[a, b], 0.5).unwrap();
        // pixel 0: a wins at 0.9; pixel 1: max 0.45 below threshold;
        // pixel 2: tie below threshold; pixel 3: background
        assert_eq!(labels, vec![1, 0, 0, 0]);

        let zero = segment(&[vec![0.0; 4], vec![0.0; 4]], 0.5).unwrap();
        assert!(zero.iter().all(|&l| l == 0));

        let high = segment(&[vec![0.9; 4]], 0.5).unwrap();
        assert!(high.iter().all(|&l| l == 1));
    }

    #[test]
    fn segment_tie_at_threshold_prefers_lowest_category() {
        let a = vec![0.5];
        let b = vec![0.5];
        assert_eq!(segment(&[a, b], 0.5).unwrap(), vec![1]);
    }
}
