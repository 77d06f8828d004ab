//! Object-length analytics: bounding-box diagonals, pixel-to-millimeter
//! calibration, and IQR-based anomaly flagging (upper bound only).

use crate::detect::BBox;
use crate::error::{Error, Result};

/// Isotropic pixel-to-millimeter scale.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct CalibrationScale {
    pub mm_per_pixel: f64,
}

impl CalibrationScale {
    pub fn new(mm_per_pixel: f64) -> Result<Self> {
        if !(mm_per_pixel > 0.0 && mm_per_pixel.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mm_per_pixel must be positive and finite, got {mm_per_pixel}"
            )));
        }
        Ok(CalibrationScale { mm_per_pixel })
    }
}

/// Quartile statistics plus the indices flagged as upper-bound outliers.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AnomalyResult {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub upper_bound: f64,
    pub k: f64,
    pub flagged: Vec<usize>,
}

/// Euclidean diagonal of a box, a proxy for object length.
pub fn diagonal(bbox: &BBox) -> f64 {
    let dx = bbox.x_max - bbox.x_min;
    let dy = bbox.y_max - bbox.y_min;
    (dx * dx + dy * dy).sqrt()
}

pub fn to_millimeters(diagonal_px: f64, scale: &CalibrationScale) -> f64 {
    diagonal_px * scale.mm_per_pixel
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    // Linear interpolation at fractional index h = (n - 1) * p.
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// First and third quartiles by linear interpolation on (n - 1) * p.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "quartiles need at least 4 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("quartiles require finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75)))
}

/// Flag indices whose value strictly exceeds Q3 + k * IQR. Lower-bound
/// outliers are deliberately ignored: only long objects are anomalies.
pub fn flag_anomalies(diagonals: &[f64], k: f64) -> Result<AnomalyResult> {
    let (q1, q3) = quartiles(diagonals)?;
    let iqr = q3 - q1;
    let upper_bound = q3 + k * iqr;
    let flagged = diagonals
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > upper_bound)
        .map(|(i, _)| i)
        .collect();
    Ok(AnomalyResult { q1, q3, iqr, upper_bound, k, flagged })
}

pub const DEFAULT_IQR_K: f64 = 1.5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn three_four_five_triangle() {
        assert_eq!(diagonal(&bbox(0.0, 0.0, 3.0, 4.0)), 5.0);
    }

    #[test]
    fn point_box_has_zero_diagonal() {
        assert_eq!(diagonal(&bbox(7.0, 7.0, 7.0, 7.0)), 0.0);
    }

    #[test]
    fn axis_aligned_diagonal() {
        assert_eq!(diagonal(&bbox(10.0, 10.0, 70.0, 10.0)), 60.0);
    }

    #[test]
    fn diagonal_is_translation_invariant_and_linear_in_scale() {
        let b = bbox(1.0, 2.0, 4.0, 6.0);
        let shifted = bbox(11.0, 22.0, 14.0, 26.0);
        assert!((diagonal(&b) - diagonal(&shifted)).abs() < 1e-12);
        let scaled = bbox(2.0, 4.0, 8.0, 12.0);
        assert!((diagonal(&scaled) - 2.0 * diagonal(&b)).abs() < 1e-12);
    }

    #[test]
    fn millimeter_conversion() {
        let scale = CalibrationScale::new(0.5).unwrap();
        assert_eq!(to_millimeters(5.0, &scale), 2.5);
        assert_eq!(to_millimeters(0.0, &scale), 0.0);
        // 120 px at 0.5 mm/px: the nominal 60 mm hull.
        assert_eq!(to_millimeters(120.0, &scale), 60.0);
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(CalibrationScale::new(0.0).is_err());
        assert!(CalibrationScale::new(-1.0).is_err());
        assert!(CalibrationScale::new(f64::NAN).is_err());
    }

    #[test]
    fn quartiles_of_one_to_five() {
        let (q1, q3) = quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((q1, q3), (2.0, 4.0));
    }

    #[test]
    fn quartiles_of_constant_list() {
        let (q1, q3) = quartiles(&[7.0; 6]).unwrap();
        assert_eq!((q1, q3), (7.0, 7.0));
    }

    #[test]
    fn quartiles_fixture() {
        let (q1, q3) = quartiles(&[10.0, 11.0, 11.0, 12.0, 12.0, 12.0, 13.0, 300.0]).unwrap();
        assert_eq!((q1, q3), (11.0, 12.25));
    }

    #[test]
    fn too_few_values_rejected() {
        assert!(quartiles(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn anomaly_fixture_flags_only_the_long_one() {
        let values = [10.0, 11.0, 11.0, 12.0, 12.0, 12.0, 13.0, 300.0];
        let result = flag_anomalies(&values, DEFAULT_IQR_K).unwrap();
        assert_eq!(result.iqr, 1.25);
        assert_eq!(result.upper_bound, 14.125);
        assert_eq!(result.flagged, vec![7]);
    }

    #[test]
    fn constant_list_flags_nothing() {
        let result = flag_anomalies(&[5.0; 8], DEFAULT_IQR_K).unwrap();
        assert!(result.flagged.is_empty());
    }

    #[test]
    fn small_values_are_never_flagged() {
        let mut values = vec![1.0; 10];
        values.push(0.01);
        let result = flag_anomalies(&values, DEFAULT_IQR_K).unwrap();
        assert!(result.flagged.is_empty());
    }

    /// Reference quantile: exhaustive definition via sorting plus direct
    /// interpolation, written independently of the implementation.
    fn reference_quantile(values: &[f64], p: f64) -> f64 {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = p * (s.len() as f64 - 1.0);
        let i = h as usize;
        if i + 1 >= s.len() {
            s[s.len() - 1]
        } else {
            s[i] * (1.0 - (h - i as f64)) + s[i + 1] * (h - i as f64)
        }
    }

    #[test]
    fn quartiles_agree_with_reference_on_random_lists() {
        for seed in 0..50u64 {
            let mut rng = SplitMix64::stream(seed, 0);
            let n = 4 + rng.next_below(40) as usize;
            let values: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 100.0)).collect();
            let (q1, q3) = quartiles(&values).unwrap();
            assert!((q1 - reference_quantile(&values, 0.25)).abs() < 1e-9);
            assert!((q3 - reference_quantile(&values, 0.75)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn flagging_invariant_to_order_and_uniform_rescale(
            seed in 0u64..500,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = SplitMix64::stream(seed, 1);
            let n = 4 + rng.next_below(30) as usize;
            let values: Vec<f64> = (0..n).map(|_| rng.uniform(1.0, 50.0)).collect();
            let base = flag_anomalies(&values, DEFAULT_IQR_K).unwrap();

            let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let rescaled = flag_anomalies(&scaled, DEFAULT_IQR_K).unwrap();
            prop_assert_eq!(&base.flagged, &rescaled.flagged);

            let mut reversed = values.clone();
            reversed.reverse();
            let rev = flag_anomalies(&reversed, DEFAULT_IQR_K).unwrap();
            let mapped: Vec<usize> = rev.flagged.iter().map(|i| n - 1 - i).rev().collect();
            prop_assert_eq!(&base.flagged, &mapped);
        }
    }
}
