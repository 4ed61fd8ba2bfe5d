//! Bayer-preserving test-time augmentation and burst-subset ensembling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Burst, PixelGrid, RgbImage};
use crate::motion::{MotionModel, MotionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialTransform {
    Identity,
    Transpose,
}

/// One test-time augmentation: a spatial transform applied to every frame and
/// a reordering of the non-reference frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugDescriptor {
    pub transform: SpatialTransform,
    /// New frame `i + 1` is old frame `frame_permutation[i]`; empty keeps the order.
    pub frame_permutation: Vec<usize>,
    pub seed: u64,
}

impl AugDescriptor {
    pub fn identity() -> Self {
        Self { transform: SpatialTransform::Identity, frame_permutation: vec![], seed: 0 }
    }

    pub fn transpose() -> Self {
        Self { transform: SpatialTransform::Transpose, ..Self::identity() }
    }

    /// Seeded shuffle of frames `1..frames`.
    pub fn shuffle(frames: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (1..frames).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { transform: SpatialTransform::Identity, frame_permutation: perm, seed }
    }

    /// Descriptor that undoes this one on a burst.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.frame_permutation.len()];
        for (i, &src) in self.frame_permutation.iter().enumerate() {
            inv[src - 1] = i + 1;
        }
        Self { transform: self.transform, frame_permutation: inv, seed: self.seed }
    }

    fn check(&self, frames: usize) -> Result<()> {
        if self.frame_permutation.is_empty() {
            return Ok(());
        }
        let mut seen = vec![false; frames];
        if self.frame_permutation.len() + 1 != frames {
            return Err(Error::param(format!(
                "permutation covers {} frames, burst has {} non-reference frames",
                self.frame_permutation.len(),
                frames - 1
            )));
        }
        for &p in &self.frame_permutation {
            if p == 0 || p >= frames || seen[p] {
                return Err(Error::param("frame permutation must be a bijection of 1..K-1"));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// Source index of output frame `k`.
    fn source(&self, k: usize) -> usize {
        if k == 0 || self.frame_permutation.is_empty() {
            k
        } else {
            self.frame_permutation[k - 1]
        }
    }
}

/// Identity, transpose and one seeded shuffle.
pub fn default_descriptors(frames: usize, seed: u64) -> Vec<AugDescriptor> {
    vec![AugDescriptor::identity(), AugDescriptor::transpose(), AugDescriptor::shuffle(frames, seed)]
}

/// Transforms every frame, then reorders frames `1..K-1`.
pub fn augment(burst: &Burst, d: &AugDescriptor) -> Result<Burst> {
    d.check(burst.len())?;
    if d.transform == SpatialTransform::Transpose && !burst.cfa().is_transpose_invariant() {
        return Err(Error::UnsupportedPhase(burst.cfa().to_string()));
    }
    let frames = (0..burst.len())
        .map(|k| {
            let f = &burst.frames()[d.source(k)];
            match d.transform {
                SpatialTransform::Identity => f.clone(),
                SpatialTransform::Transpose => f.transpose(),
            }
        })
        .collect();
    Burst::new(frames)
}

/// Motions matching [`augment`] for callers that already know them.
pub fn augment_motions(motions: &[MotionParams], d: &AugDescriptor) -> Result<Vec<MotionParams>> {
    d.check(motions.len())?;
    (0..motions.len())
        .map(|k| {
            let p = &motions[d.source(k)];
            match d.transform {
                SpatialTransform::Identity => Ok(p.clone()),
                SpatialTransform::Transpose => transpose_motion(p),
            }
        })
        .collect()
}

/// `S T S` with `S` swapping x and y.
fn transpose_motion(p: &MotionParams) -> Result<MotionParams> {
    match p.model {
        MotionModel::Translation => Ok(MotionParams::translation(p.ty(), p.tx())),
        MotionModel::Euclidean => Ok(MotionParams::euclidean(p.ty(), p.tx(), -p.theta())),
        MotionModel::Affine => {
            let (tx, ty, a, b, c, d) = (p.params[0], p.params[1], p.params[2], p.params[3], p.params[4], p.params[5]);
            MotionParams::new(MotionModel::Affine, vec![ty, tx, d, c, b, a])
        }
    }
}

/// Undoes the spatial part of `d` on an HR output.
pub fn invert_output(sr: &RgbImage, d: &AugDescriptor) -> RgbImage {
    match d.transform {
        SpatialTransform::Identity => sr.clone(),
        SpatialTransform::Transpose => sr.transpose(),
    }
}

fn average(images: Vec<RgbImage>) -> Result<RgbImage> {
    let first = images.first().ok_or_else(|| Error::param("nothing to average"))?;
    let (h, w) = first.dims();
    let space = first.space();
    let mut acc = vec![0.0; h * w * 3];
    for img in &images {
        if img.dims() != (h, w) {
            return Err(Error::dim("ensemble members differ in size"));
        }
        for (a, v) in acc.iter_mut().zip(img.grid().data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    RgbImage::new(PixelGrid::new(h, w, 3, acc)?, space)
}

/// Mean of `invert_output(solve(augment(burst, d), d), d)` over the distinct descriptors.
///
/// Members are solved in parallel and averaged in descriptor order.
pub fn tta_solve<F>(solve: F, burst: &Burst, descriptors: &[AugDescriptor]) -> Result<RgbImage>
where
    F: Fn(&Burst, &AugDescriptor) -> Result<RgbImage> + Sync,
{
    let mut unique: Vec<AugDescriptor> = Vec::new();
    for d in descriptors {
        if !unique.contains(d) {
            unique.push(d.clone());
        }
    }
    if unique.is_empty() {
        return Err(Error::param("at least one descriptor is required"));
    }
    let outputs = unique
        .par_iter()
        .map(|d| {
            let b = augment(burst, d)?;
            Ok(invert_output(&solve(&b, d)?, d))
        })
        .collect::<Result<Vec<_>>>()?;
    average(outputs)
}

/// Frame indices of each subset: the reference followed by up to
/// `subset_size - 1` further frames, the last group padded with the reference.
pub fn subset_indices(frames: usize, subset_size: usize) -> Result<Vec<Vec<usize>>> {
    if subset_size < 2 {
        return Err(Error::param("subsets need at least two frames"));
    }
    if frames < 2 {
        return Ok(vec![vec![0; frames.max(1)]]);
    }
    let rest: Vec<usize> = (1..frames).collect();
    Ok(rest
        .chunks(subset_size - 1)
        .map(|chunk| {
            let mut g = vec![0];
            g.extend_from_slice(chunk);
            g.resize(subset_size.min(frames), 0);
            g
        })
        .collect())
}

/// Averages the reconstructions of reference-anchored sub-bursts.
pub fn subset_ensemble<F>(solve: F, burst: &Burst, subset_size: usize) -> Result<RgbImage>
where
    F: Fn(&Burst, &[usize]) -> Result<RgbImage> + Sync,
{
    let groups = subset_indices(burst.len(), subset_size)?;
    let outputs = groups
        .par_iter()
        .map(|g| {
            let sub = Burst::new(g.iter().map(|&k| burst.frames()[k].clone()).collect())?;
            solve(&sub, g)
        })
        .collect::<Result<Vec<_>>>()?;
    average(outputs)
}
