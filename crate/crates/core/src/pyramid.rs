//! 3-level spatial pyramid: block assignment, max-pooling of sparse codes,
//! block saliency and saliency-weighted pooling.
//!
//! The image is split into 1x1, 2x2 and 4x4 equal rectangles — 21 blocks.
//! Each patch joins exactly one block per level, by patch center; a center
//! exactly on a block boundary goes to the lower-index block.

use crate::error::{Error, Result};
use crate::imgfeat::PatchGrid;
use crate::linalg;
use crate::sparsecode::SparseCode;

pub const LEVELS: usize = 3;
pub const BLOCKS: usize = 1 + 4 + 16;
/// Offset of each level's first block in the 21-block list.
const LEVEL_OFFSET: [usize; LEVELS] = [0, 1, 5];

/// Patch-to-block assignment on a fixed grid and image size.
#[derive(Debug, Clone)]
pub struct PyramidLayout {
    /// For each patch, its block index at every level.
    pub memberships: Vec<[usize; LEVELS]>,
    /// Patches per block, row-major block order.
    pub blocks: Vec<Vec<usize>>,
}

/// Index of the block containing coordinate `c` when `extent` pixels are
/// split into `parts` equal pieces; boundary coordinates go low.
fn block_coord(c: usize, extent: usize, parts: usize) -> usize {
    let scaled = c * parts;
    let raw = scaled / extent;
    if raw > 0 && scaled % extent == 0 {
        raw - 1
    } else {
        raw.min(parts - 1)
    }
}

pub fn assign_blocks(grid: &PatchGrid, width: usize, height: usize) -> Result<PyramidLayout> {
    if grid.patch_count() == 0 {
        return Err(Error::Dimension("empty patch grid".into()));
    }
    let mut memberships = Vec::with_capacity(grid.patch_count());
    let mut blocks = vec![Vec::new(); BLOCKS];
    for p in 0..grid.patch_count() {
        let (cx, cy) = grid.center(p);
        let mut entry = [0usize; LEVELS];
        for (level, item) in entry.iter_mut().enumerate() {
            let parts = 1usize << level;
            let bx = block_coord(cx, width, parts);
            let by = block_coord(cy, height, parts);
            let b = LEVEL_OFFSET[level] + by * parts + bx;
            *item = b;
            blocks[b].push(p);
        }
        memberships.push(entry);
    }
    Ok(PyramidLayout { memberships, blocks })
}

/// Per-block max of |coefficient| over the assigned patches' codes.
/// Empty blocks pool to zero vectors.
pub fn max_pool(codes: &[SparseCode], layout: &PyramidLayout) -> Result<Vec<Vec<f64>>> {
    let dict_size = codes.first().map(|c| c.dict_size).unwrap_or(0);
    if codes.iter().any(|c| c.dict_size != dict_size) {
        return Err(Error::Dimension("codes disagree on dictionary size".into()));
    }
    let mut pooled = vec![vec![0.0; dict_size]; BLOCKS];
    for (block, members) in layout.blocks.iter().enumerate() {
        for &p in members {
            for (idx, c) in codes[p].iter() {
                let v = c.abs();
                if v > pooled[block][idx] {
                    pooled[block][idx] = v;
                }
            }
        }
    }
    Ok(pooled)
}

/// Concatenate the 21 block vectors and L2-normalize; all-zero input stays
/// the zero vector.
pub fn concat_normalize(pooled: &[Vec<f64>]) -> Result<Vec<f64>> {
    if pooled.len() != BLOCKS {
        return Err(Error::Dimension(format!("{} blocks, expected {}", pooled.len(), BLOCKS)));
    }
    let mut out = Vec::with_capacity(pooled.iter().map(|b| b.len()).sum());
    for b in pooled {
        out.extend_from_slice(b);
    }
    let norm = linalg::norm2(&out);
    if norm > 0.0 {
        for v in out.iter_mut() {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Per-block weights: the sum over categories of the mean of each
/// category's top-nu saliency values in the block.
#[derive(Debug, Clone)]
pub struct BlockSaliency {
    pub weights: Vec<f64>,
    pub nu: usize,
}

/// Mean of the `min(nu, len)` largest values.
fn top_nu_mean(values: &mut Vec<f64>, nu: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let take = nu.min(values.len());
    values[..take].iter().sum::<f64>() / take as f64
}

/// `maps` holds one per-patch saliency map per category, all on the grid
/// that produced `layout`.
pub fn block_saliency(
    maps: &[Vec<f64>],
    layout: &PyramidLayout,
    nu: usize,
) -> Result<BlockSaliency> {
    let t = layout.memberships.len();
    for m in maps {
        if m.len() != t {
            return Err(Error::Dimension(format!(
                "saliency map of {} patches on a {}-patch layout",
                m.len(),
                t
            )));
        }
    }
    let mut weights = vec![0.0; BLOCKS];
    for (block, members) in layout.blocks.iter().enumerate() {
        for map in maps {
            let mut vals: Vec<f64> = members.iter().map(|&p| map[p]).collect();
            weights[block] += top_nu_mean(&mut vals, nu);
        }
    }
    Ok(BlockSaliency { weights, nu })
}

/// Scale every block's pooled vector by its block saliency.
pub fn saliency_weighted_pool(
    pooled: &[Vec<f64>],
    bs: &BlockSaliency,
) -> Result<Vec<Vec<f64>>> {
    if pooled.len() != bs.weights.len() {
        return Err(Error::Dimension(format!(
            "{} pooled blocks vs {} weights",
            pooled.len(),
            bs.weights.len()
        )));
    }
    Ok(pooled
        .iter()
        .zip(&bs.weights)
        .map(|(block, &w)| block.iter().map(|v| v * w).collect())
        .collect())
}
