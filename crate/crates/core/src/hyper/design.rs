//! Deterministic hyperparameter designs: tensor grids and central composite
//! designs, weighted by the evaluated (approximate) log posterior density.

use std::path::Path;

use super::{SampleSource, WeightedSampleSet};
use crate::error::{Error, Result};

/// Evaluate the log posterior at each design point and build a normalized
/// sample set; non-finite points are dropped with a warning.
fn weight_points<F>(
    points: Vec<Vec<f64>>,
    source: SampleSource,
    mut log_posterior: F,
) -> Result<WeightedSampleSet>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut kept = Vec::with_capacity(points.len());
    let mut log_w = Vec::with_capacity(points.len());
    let mut warnings = Vec::new();
    for (idx, pt) in points.into_iter().enumerate() {
        let lp = log_posterior(&pt);
        if lp.is_finite() {
            kept.push(pt);
            log_w.push(lp);
        } else {
            warnings.push(format!("design point {idx} dropped: non-finite posterior"));
        }
    }
    if kept.is_empty() {
        return Err(Error::NumericalFailure(
            "posterior non-finite at every design point".into(),
        ));
    }
    let mut set = WeightedSampleSet::new(kept, log_w, source)?;
    set.warnings = warnings;
    Ok(set)
}

/// Central composite design around `center`: the center point, 2p axial
/// points at distance sqrt(p) standard deviations, and factorial corners at
/// one standard deviation per coordinate (so corners also sit on the sqrt(p)
/// sphere). Full factorial up to p = 5, a half fraction (even sign parity)
/// beyond. Weights come from the log posterior at each point.
pub fn ccd_design<F>(
    center: &[f64],
    scales: &[f64],
    log_posterior: F,
) -> Result<WeightedSampleSet>
where
    F: FnMut(&[f64]) -> f64,
{
    let p = center.len();
    if p == 0 || scales.len() != p {
        return Err(Error::InvalidInput("center and scales must have equal nonzero length".into()));
    }
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput("design scales must be positive and finite".into()));
    }
    let r = (p as f64).sqrt();
    let mut points = vec![center.to_vec()];
    for j in 0..p {
        for dir in [1.0, -1.0] {
            let mut pt = center.to_vec();
            pt[j] += dir * r * scales[j];
            points.push(pt);
        }
    }
    // factorial corners: every sign pattern (p <= 5), else the half with even
    // number of minus signs — a standard resolution-preserving fraction.
    // For p = 1 the corners coincide with the axial points and are skipped.
    let take_all = p <= 5;
    if p > 1 {
        for mask in 0..(1u32 << p) {
            if !take_all && mask.count_ones() % 2 == 1 {
                continue;
            }
            let mut pt = center.to_vec();
            for (j, item) in pt.iter_mut().enumerate() {
                let sign = if mask >> j & 1 == 1 { -1.0 } else { 1.0 };
                *item += sign * scales[j];
            }
            points.push(pt);
        }
    }
    weight_points(points, SampleSource::Ccd, log_posterior)
}

/// Tensor-product grid: `per_dim` evenly spaced points spanning
/// center +- half_width * scale in every coordinate.
pub fn grid_design<F>(
    center: &[f64],
    scales: &[f64],
    per_dim: usize,
    half_width: f64,
    log_posterior: F,
) -> Result<WeightedSampleSet>
where
    F: FnMut(&[f64]) -> f64,
{
    let p = center.len();
    if p == 0 || scales.len() != p {
        return Err(Error::InvalidInput("center and scales must have equal nonzero length".into()));
    }
    if per_dim < 2 || !(half_width > 0.0) {
        return Err(Error::InvalidInput("grid needs >= 2 points per dimension".into()));
    }
    let total = (per_dim as u64).checked_pow(p as u32).filter(|&t| t <= 100_000).ok_or_else(
        || Error::InvalidInput("grid too large; reduce dimensions or points per dimension".into()),
    )?;
    let mut points = Vec::with_capacity(total as usize);
    for flat in 0..total {
        let mut idx = flat;
        let mut pt = Vec::with_capacity(p);
        for j in 0..p {
            let i = (idx % per_dim as u64) as f64;
            idx /= per_dim as u64;
            let t = if per_dim == 1 { 0.0 } else { 2.0 * i / (per_dim as f64 - 1.0) - 1.0 };
            pt.push(center[j] + t * half_width * scales[j]);
        }
        points.push(pt);
    }
    weight_points(points, SampleSource::Grid, log_posterior)
}

/// Load externally produced hyperparameter samples from CSV. Columns must
/// match `param_names`; an optional `log_weight` column supplies raw weights
/// (default: uniform).
pub fn sample_set_from_csv(path: &Path, param_names: &[String]) -> Result<WeightedSampleSet> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut col_of = Vec::with_capacity(param_names.len());
    for name in param_names {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("sample file missing column '{name}'")))?;
        col_of.push(idx);
    }
    let weight_col = headers.iter().position(|h| h == "log_weight");
    let mut samples = Vec::new();
    let mut log_w = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::InvalidInput(format!("sample file row {}: bad value", line + 2))
                })
        };
        let mut pt = Vec::with_capacity(param_names.len());
        for &idx in &col_of {
            pt.push(parse(idx)?);
        }
        samples.push(pt);
        log_w.push(match weight_col {
            Some(idx) => parse(idx)?,
            None => 0.0,
        });
    }
    WeightedSampleSet::new(samples, log_w, SampleSource::ExternalFile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ccd_point_counts() {
        // p=1 degenerates to a line: corners would duplicate the axial points
        let s1 = ccd_design(&[0.0], &[1.0], |_| 0.0).unwrap();
        assert_eq!(s1.len(), 3);
        let s2 = ccd_design(&[0.0, 0.0], &[1.0, 1.0], |_| 0.0).unwrap();
        assert_eq!(s2.len(), 1 + 4 + 4);
        let s6 = ccd_design(&[0.0; 6], &[1.0; 6], |_| 0.0).unwrap();
        assert_eq!(s6.len(), 1 + 12 + 32); // half fraction of 2^6
    }

    #[test]
    fn ccd_symmetric_posterior_gives_symmetric_weights() {
        let set = ccd_design(&[0.5, -1.0], &[0.3, 0.7], |p| {
            let a = (p[0] - 0.5) / 0.3;
            let b = (p[1] + 1.0) / 0.7;
            -0.5 * (a * a + b * b)
        })
        .unwrap();
        let w = set.weights();
        // axial points 1..=4 all sit at radius sqrt(2): equal weights
        for i in 2..=4 {
            assert_relative_eq!(w[1], w[i], epsilon = 1e-8);
        }
        // corners 5..=8 sit at the same radius too
        for i in 6..=8 {
            assert_relative_eq!(w[5], w[i], epsilon = 1e-8);
        }
        // and the center dominates
        assert!(w[0] > w[1]);
    }

    #[test]
    fn ccd_drops_nonfinite_points() {
        let set = ccd_design(&[0.0], &[1.0], |p| {
            if p[0] > 0.5 {
                f64::NAN
            } else {
                0.0
            }
        })
        .unwrap();
        assert!(set.len() < 5);
        assert!(!set.warnings.is_empty());
    }

    #[test]
    fn grid_covers_span_deterministically() {
        let g = grid_design(&[1.0], &[2.0], 5, 1.5, |p| -p[0].abs()).unwrap();
        assert_eq!(g.len(), 5);
        assert_relative_eq!(g.samples[0][0], 1.0 - 3.0, epsilon = 1e-12);
        assert_relative_eq!(g.samples[4][0], 1.0 + 3.0, epsilon = 1e-12);
        let g2 = grid_design(&[1.0], &[2.0], 5, 1.5, |p| -p[0].abs()).unwrap();
        assert_eq!(g.samples, g2.samples);
        assert_eq!(g.log_weights, g2.log_weights);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join("gploo_design_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("samples.csv");
        std::fs::write(&path, "a,b,log_weight\n0.1,0.2,0.0\n0.3,0.4,-1.0\n").unwrap();
        let set = sample_set_from_csv(&path, &["a".into(), "b".into()]).unwrap();
        assert_eq!(set.len(), 2);
        assert_relative_eq!(set.samples[1][1], 0.4, epsilon = 1e-12);
        let w = set.weights();
        assert_relative_eq!(w[0] / w[1], std::f64::consts::E, epsilon = 1e-12);
        assert!(sample_set_from_csv(&path, &["a".into(), "missing".into()]).is_err());
    }
}
