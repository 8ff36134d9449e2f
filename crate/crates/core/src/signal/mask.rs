//! Random restoration masks: several spread-out regions for the whole
//! signal, one contiguous run for a heartbeat.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Binary keep/drop vector and the masked runs it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// `true` = visible, `false` = masked.
    pub keep: Vec<bool>,
    pub ratio: f64,
    /// Masked intervals as `(start, length)`, sorted and disjoint.
    pub regions: Vec<(usize, usize)>,
}

impl MaskSpec {
    pub fn all_visible(len: usize, ratio: f64) -> Self {
        Self {
            keep: vec![true; len],
            ratio,
            regions: Vec::new(),
        }
    }

    fn from_regions(len: usize, ratio: f64, regions: Vec<(usize, usize)>) -> Self {
        let mut keep = vec![true; len];
        for &(s, l) in &regions {
            keep[s..s + l].iter_mut().for_each(|k| *k = false);
        }
        Self {
            keep,
            ratio,
            regions,
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    /// The mask as 1.0 / 0.0 values.
    pub fn weights(&self) -> Vec<f64> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }

    /// Elementwise product with the mask; masked samples become 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.keep.len() {
            return Err(Error::dim(format!(
                "mask of length {} applied to signal of length {}",
                self.keep.len(),
                x.len()
            )));
        }
        Ok(x
            .iter()
            .zip(&self.keep)
            .map(|(&v, &k)| if k { v } else { 0.0 })
            .collect())
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::contract(format!("mask ratio must be in [0, 1), got {ratio}")));
    }
    Ok(())
}

/// Number of masked points for a ratio: `round(ratio · len)`.
pub fn masked_points(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).round() as usize).min(len)
}

/// `round(ratio·len)` masked points split into `k_regions` runs whose
/// lengths differ by at most one, placed uniformly at random with at least
/// one visible sample between runs.
pub fn make_global_mask<R: Rng + ?Sized>(
    len: usize,
    ratio: f64,
    k_regions: usize,
    rng: &mut R,
) -> Result<MaskSpec> {
    check_ratio(ratio)?;
    let total = masked_points(len, ratio);
    if total == 0 {
        return Ok(MaskSpec::all_visible(len, ratio));
    }
    if k_regions == 0 || k_regions > total {
        return Err(Error::contract(format!(
            "cannot split {total} masked points into {k_regions} regions"
        )));
    }
    if total + k_regions - 1 > len {
        return Err(Error::contract(format!(
            "{k_regions} separated regions totalling {total} points do not fit in {len}"
        )));
    }

    let base = total / k_regions;
    let extra = total % k_regions;
    let mut lengths: Vec<usize> = (0..k_regions)
        .map(|i| base + usize::from(i < extra))
        .collect();
    lengths.shuffle(rng);

    // Stars and bars: k+1 free gaps summing to `slack`, uniform over compositions.
    let slack = len - total - (k_regions - 1);
    let mut bars = sample(rng, slack + k_regions, k_regions).into_vec();
    bars.sort_unstable();
    let mut gaps = Vec::with_capacity(k_regions);
    let mut prev: isize = -1;
    for &b in &bars {
        gaps.push((b as isize - prev - 1) as usize);
        prev = b as isize;
    }

    let mut regions = Vec::with_capacity(k_regions);
    let mut pos = 0;
    for (i, (&gap, &l)) in gaps.iter().zip(&lengths).enumerate() {
        pos += gap + usize::from(i > 0);
        regions.push((pos, l));
        pos += l;
    }
    Ok(MaskSpec::from_regions(len, ratio, regions))
}

/// A single run of `round(ratio·len)` masked points at a uniform start.
pub fn make_local_mask<R: Rng + ?Sized>(len: usize, ratio: f64, rng: &mut R) -> Result<MaskSpec> {
    check_ratio(ratio)?;
    let total = masked_points(len, ratio);
    if total == 0 {
        return Ok(MaskSpec::all_visible(len, ratio));
    }
    let start = rng.gen_range(0..=len - total);
    Ok(MaskSpec::from_regions(len, ratio, vec![(start, total)]))
}
