//! Weight and scale distributions of binary layers.

use std::fmt;

use crate::model::{Layer, Network};
use crate::scalar::Scalar;

pub const BINS: usize = 64;
/// `|w| < NEAR_ZERO * max |w|` counts as near zero.
pub const NEAR_ZERO: f64 = 0.1;

/// Fixed-bin histogram over `[lo, hi]`; the top edge falls into the last bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + b as f64 * w, self.lo + (b + 1) as f64 * w)
    }
}

/// Fraction of entries with `|w| < 0.1 * max|w|`; all-zero input counts as entirely near zero.
pub fn near_zero_fraction<T: Scalar>(w: &[T]) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    near_zero_count(w) as f64 / w.len() as f64
}

pub fn near_zero_count<T: Scalar>(w: &[T]) -> usize {
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
    if max == 0.0 {
        return w.len();
    }
    let cut = NEAR_ZERO * max;
    w.iter().filter(|v| v.to_f64_lossy().abs() < cut).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDistribution {
    /// Index in the network's layer list.
    pub layer: usize,
    /// Over `[-max|w|, max|w|]`.
    pub weights: Histogram,
    /// Over `[0, max inv_alpha]`.
    pub scales: Histogram,
    pub near_zero: usize,
    pub weight_count: usize,
}

impl LayerDistribution {
    pub fn near_zero_fraction(&self) -> f64 {
        self.near_zero as f64 / self.weight_count as f64
    }
}

fn symmetric_range(values: &[f64]) -> f64 {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

pub fn layer_distribution<T: Scalar>(layer: usize, weight: &[T], inv_alpha: &[T]) -> LayerDistribution {
    let w: Vec<f64> = weight.iter().map(|v| v.to_f64_lossy()).collect();
    let a: Vec<f64> = inv_alpha.iter().map(|v| v.to_f64_lossy()).collect();
    let m = symmetric_range(&w);
    let amax = a.iter().fold(0.0f64, |x, &v| x.max(v));
    LayerDistribution {
        layer,
        weights: Histogram::new(w.iter().copied(), -m, m, BINS),
        scales: Histogram::new(a.iter().copied(), 0.0, if amax > 0.0 { amax } else { 1.0 }, BINS),
        near_zero: near_zero_count(weight),
        weight_count: weight.len(),
    }
}

/// Histograms of every binary layer's weights and scales.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    pub layers: Vec<LayerDistribution>,
}

impl DistributionReport {
    /// Near-zero fraction pooled over all binary weights.
    pub fn near_zero_fraction(&self) -> f64 {
        let (nz, total) = self
            .layers
            .iter()
            .fold((0, 0), |(a, b), l| (a + l.near_zero, b + l.weight_count));
        if total == 0 {
            0.0
        } else {
            nz as f64 / total as f64
        }
    }

    pub fn layer(&self, index: usize) -> Option<&LayerDistribution> {
        self.layers.iter().find(|l| l.layer == index)
    }
}

pub fn distribution_report<T: Scalar>(net: &Network<T>) -> DistributionReport {
    DistributionReport {
        layers: net
            .layers()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::BinaryConv(b) => Some(layer_distribution(i, b.weight.data(), b.scale.inv_alpha())),
                _ => None,
            })
            .collect(),
    }
}

pub const REPORT_HEADER: &str = "layer\tquantity\tbin\tlo\thi\tcount";

impl fmt::Display for LayerDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, h) in [("weight", &self.weights), ("inv_alpha", &self.scales)] {
            for (b, &c) in h.counts.iter().enumerate() {
                let (lo, hi) = h.bin_edges(b);
                writeln!(f, "{}\t{name}\t{b}\t{lo:.6e}\t{hi:.6e}\t{c}", self.layer)?;
            }
        }
        writeln!(
            f,
            "{}\tnear_zero_fraction\t-\t-\t-\t{:.6}",
            self.layer,
            self.near_zero_fraction()
        )
    }
}

impl fmt::Display for DistributionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{REPORT_HEADER}")?;
        for l in &self.layers {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_make_one_spike_at_zero_bin() {
        let d = layer_distribution(0, &[0.0f64; 10], &[1.0; 2]);
        assert_eq!(d.weights.counts[BINS / 2], 10);
        assert_eq!(d.weights.total(), 10);
        assert_eq!(d.near_zero_fraction(), 1.0);
    }

    #[test]
    fn plus_minus_one_fill_extreme_bins() {
        let w = [1.0f64, -1.0, -1.0, 1.0, 1.0];
        let d = layer_distribution(3, &w, &[0.5, 2.0]);
        assert_eq!(d.weights.counts[0], 2);
        assert_eq!(d.weights.counts[BINS - 1], 3);
        assert_eq!(d.near_zero_fraction(), 0.0);
        assert_eq!(d.scales.counts[BINS - 1], 1);
        assert_eq!(d.scales.counts[BINS / 4], 1);
    }

    #[test]
    fn near_zero_cut_is_strict() {
        assert_eq!(near_zero_fraction(&[1.0f64, 0.1, 0.0999, -0.05]), 0.5);
    }
}
