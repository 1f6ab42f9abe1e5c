//! Experiment metrics: speed RMSE, discrete speed-class tables, detection
//! offset statistics, and the vehicle/noise separation gap.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Discretization of speeds into classes `floor((v - base) / width)`,
/// clamped to `0..n_classes`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedClassScheme {
    pub base_kmh: f64,
    pub width_kmh: f64,
    pub n_classes: usize,
}

impl Default for SpeedClassScheme {
    fn default() -> Self {
        SpeedClassScheme {
            base_kmh: 25.0,
            width_kmh: 10.0,
            n_classes: 8,
        }
    }
}

impl SpeedClassScheme {
    pub fn speed_to_class(&self, speed_kmh: f64) -> usize {
        let raw = ((speed_kmh - self.base_kmh) / self.width_kmh).floor();
        if raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.n_classes - 1)
        }
    }
}

/// Root-mean-square error between predictions and ground truth.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("rmse of an empty set"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid("prediction and truth counts differ"));
    }
    let se: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((se / pred.len() as f64).sqrt())
}

/// One prediction attributed to a vehicle, for per-vehicle aggregation.
#[derive(Clone, Debug)]
pub struct SpeedOutcome {
    pub vehicle_id: String,
    pub predicted_kmh: f64,
    pub true_kmh: f64,
}

/// Percentages of predictions per class-difference bucket. The first four
/// columns partition the predictions and sum to 100; `pct_within_one` is the
/// derived `delta = 0 or |delta| = 1` column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub vehicle_id: String,
    pub n: usize,
    pub pct_exact: f64,
    pub pct_off_one: f64,
    pub pct_off_two: f64,
    pub pct_off_more: f64,
    pub pct_within_one: f64,
}

/// Per-vehicle rows (sorted by vehicle id) plus their unweighted average.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationTable {
    pub rows: Vec<ClassificationRow>,
    pub average: ClassificationRow,
}

/// Buckets each prediction by predicted-minus-true class difference and
/// aggregates percentages per vehicle. The average row weights every vehicle
/// equally regardless of its clip count.
pub fn classification_table(
    outcomes: &[SpeedOutcome],
    scheme: &SpeedClassScheme,
) -> Result<ClassificationTable> {
    if outcomes.is_empty() {
        return Err(Error::invalid("classification table of an empty set"));
    }
    let mut by_vehicle: Vec<(&str, [usize; 4], usize)> = Vec::new();
    for o in outcomes {
        let delta = scheme.speed_to_class(o.predicted_kmh) as i64
            - scheme.speed_to_class(o.true_kmh) as i64;
        let bucket = match delta.abs() {
            0 => 0,
            1 => 1,
            2 => 2,
            _ => 3,
        };
        match by_vehicle.iter_mut().find(|(v, _, _)| *v == o.vehicle_id) {
            Some((_, counts, n)) => {
                counts[bucket] += 1;
                *n += 1;
            }
            None => {
                let mut counts = [0usize; 4];
                counts[bucket] = 1;
                by_vehicle.push((&o.vehicle_id, counts, 1));
            }
        }
    }
    by_vehicle.sort_by(|a, b| a.0.cmp(b.0));

    let to_row = |vehicle_id: &str, counts: [usize; 4], n: usize| {
        let pct = |c: usize| 100.0 * c as f64 / n as f64;
        ClassificationRow {
            vehicle_id: vehicle_id.to_string(),
            n,
            pct_exact: pct(counts[0]),
            pct_off_one: pct(counts[1]),
            pct_off_two: pct(counts[2]),
            pct_off_more: pct(counts[3]),
            pct_within_one: pct(counts[0] + counts[1]),
        }
    };

    let rows: Vec<ClassificationRow> = by_vehicle
        .iter()
        .map(|(v, counts, n)| to_row(v, *counts, *n))
        .collect();

    let k = rows.len() as f64;
    let total_n = rows.iter().map(|r| r.n).sum();
    let avg = |f: fn(&ClassificationRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let average = ClassificationRow {
        vehicle_id: "average".to_string(),
        n: total_n,
        pct_exact: avg(|r| r.pct_exact),
        pct_off_one: avg(|r| r.pct_off_one),
        pct_off_two: avg(|r| r.pct_off_two),
        pct_off_more: avg(|r| r.pct_off_more),
        pct_within_one: avg(|r| r.pct_within_one),
    };
    Ok(ClassificationTable { rows, average })
}

/// Mean, sample standard deviation, and a fixed-width histogram of detection
/// time offsets (predicted minus annotated closest-approach time).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OffsetStats {
    pub mean_s: f64,
    pub std_s: f64,
    pub bin_width_s: f64,
    /// `(bin start, count)` sorted by bin start; bin k covers
    /// `[k * width, (k + 1) * width)`.
    pub histogram: Vec<(f64, usize)>,
}

pub const OFFSET_BIN_WIDTH_S: f64 = 0.025;

pub fn detection_offset_stats(offsets: &[f64]) -> Result<OffsetStats> {
    if offsets.len() < 2 {
        return Err(Error::invalid(
            "offset statistics need at least two detections",
        ));
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    let ss: f64 = offsets.iter().map(|o| (o - mean) * (o - mean)).sum();
    let std = (ss / (n - 1.0)).sqrt();

    let mut bins: Vec<(i64, usize)> = Vec::new();
    for o in offsets {
        let idx = (o / OFFSET_BIN_WIDTH_S).floor() as i64;
        match bins.iter_mut().find(|(k, _)| *k == idx) {
            Some((_, c)) => *c += 1,
            None => bins.push((idx, 1)),
        }
    }
    bins.sort_by_key(|(k, _)| *k);
    Ok(OffsetStats {
        mean_s: mean,
        std_s: std,
        bin_width_s: OFFSET_BIN_WIDTH_S,
        histogram: bins
            .into_iter()
            .map(|(k, c)| (k as f64 * OFFSET_BIN_WIDTH_S, c))
            .collect(),
    })
}

/// Gap between the weakest vehicle response and the strongest noise
/// response. Positive means a single threshold separates the two classes.
pub fn separation_gap(vehicle_maxima: &[f64], noise_maxima: &[f64]) -> Result<f64> {
    if vehicle_maxima.is_empty() || noise_maxima.is_empty() {
        return Err(Error::invalid("separation gap needs both classes"));
    }
    let weakest_vehicle = vehicle_maxima.iter().copied().fold(f64::INFINITY, f64::min);
    let strongest_noise = noise_maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(weakest_vehicle - strongest_noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_reference_value() {
        assert_eq!(rmse(&[82.0, 78.0], &[80.0, 80.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[5.0], &[5.0]).unwrap(), 0.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn class_boundaries() {
        let s = SpeedClassScheme::default();
        assert_eq!(s.speed_to_class(80.0), 5);
        assert_eq!(s.speed_to_class(25.0), 0);
        assert_eq!(s.speed_to_class(105.0), 7);
        assert_eq!(s.speed_to_class(10.0), 0);
        assert_eq!(s.speed_to_class(34.999), 0);
        assert_eq!(s.speed_to_class(35.0), 1);
        assert_eq!(s.speed_to_class(500.0), 7);
    }

    #[test]
    fn table_percentages_and_average() {
        let mk = |v: &str, p: f64, t: f64| SpeedOutcome {
            vehicle_id: v.to_string(),
            predicted_kmh: p,
            true_kmh: t,
        };
        // v1: classes exact, +1, +2, +3 of 4 predictions; v2: two exact.
        let outcomes = vec![
            mk("v1", 50.0, 50.0),
            mk("v1", 61.0, 50.0),
            mk("v1", 71.0, 50.0),
            mk("v1", 81.0, 50.0),
            mk("v2", 50.0, 50.0),
            mk("v2", 52.0, 48.0),
        ];
        let table = classification_table(&outcomes, &SpeedClassScheme::default()).unwrap();
        assert_eq!(table.rows.len(), 2);
        let r1 = &table.rows[0];
        assert_eq!(r1.vehicle_id, "v1");
        assert_eq!(r1.n, 4);
        assert!((r1.pct_exact - 25.0).abs() < 1e-9);
        assert!((r1.pct_off_one - 25.0).abs() < 1e-9);
        assert!((r1.pct_off_two - 25.0).abs() < 1e-9);
        assert!((r1.pct_off_more - 25.0).abs() < 1e-9);
        assert!((r1.pct_within_one - 50.0).abs() < 1e-9);
        let r2 = &table.rows[1];
        // 52 vs 48 straddles the 45..55 class boundary: both land in class 2.
        assert!((r2.pct_exact - 100.0).abs() < 1e-9);

        // Unweighted average over vehicles, not over predictions.
        assert!((table.average.pct_exact - 62.5).abs() < 1e-9);
        assert_eq!(table.average.n, 6);
        for r in table.rows.iter().chain([&table.average]) {
            let sum = r.pct_exact + r.pct_off_one + r.pct_off_two + r.pct_off_more;
            assert!((sum - 100.0).abs() < 0.1, "row sum {sum}");
        }
    }

    #[test]
    fn offset_stats_reference_values() {
        let stats = detection_offset_stats(&[-0.01, 0.0, 0.01]).unwrap();
        assert!(stats.mean_s.abs() < 1e-15);
        assert!((stats.std_s - 0.01).abs() < 1e-12);
        assert_eq!(stats.bin_width_s, 0.025);
        // -0.01 falls in bin [-0.025, 0), the others in [0, 0.025).
        assert_eq!(stats.histogram, vec![(-0.025, 1), (0.0, 2)]);
        assert!(detection_offset_stats(&[0.1]).is_err());
    }

    #[test]
    fn separation_gap_reference_value() {
        assert_eq!(separation_gap(&[1.0], &[2.0]).unwrap(), -1.0);
        assert_eq!(separation_gap(&[5.0, 6.2], &[0.9, 1.1]).unwrap(), 3.9);
        assert!(separation_gap(&[], &[1.0]).is_err());
        assert!(separation_gap(&[1.0], &[]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rows_sum_to_100(
                speeds in proptest::collection::vec((20.0f64..110.0, 20.0f64..110.0), 1..40),
                split in 1usize..5,
            ) {
                let outcomes: Vec<SpeedOutcome> = speeds
                    .iter()
                    .enumerate()
                    .map(|(i, (p, t))| SpeedOutcome {
                        vehicle_id: format!("v{}", i % split),
                        predicted_kmh: *p,
                        true_kmh: *t,
                    })
                    .collect();
                let table = classification_table(&outcomes, &SpeedClassScheme::default()).unwrap();
                for r in table.rows.iter().chain([&table.average]) {
                    let sum = r.pct_exact + r.pct_off_one + r.pct_off_two + r.pct_off_more;
                    prop_assert!((sum - 100.0).abs() < 0.1);
                    prop_assert!(r.pct_within_one <= 100.0 + 1e-9);
                }
                let total: usize = table.rows.iter().map(|r| r.n).sum();
                prop_assert_eq!(total, speeds.len());
            }

            #[test]
            fn class_is_always_in_range(v in -100.0f64..400.0) {
                let s = SpeedClassScheme::default();
                prop_assert!(s.speed_to_class(v) < s.n_classes);
            }

            #[test]
            fn rmse_is_nonnegative_and_zero_iff_equal(
                pairs in proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0), 1..30),
            ) {
                let p: Vec<f64> = pairs.iter().map(|(a, _)| *a).collect();
                let t: Vec<f64> = pairs.iter().map(|(_, b)| *b).collect();
                let r = rmse(&p, &t).unwrap();
                prop_assert!(r >= 0.0);
                let same = rmse(&p, &p).unwrap();
                prop_assert_eq!(same, 0.0);
            }

            #[test]
            fn histogram_counts_every_offset(
                offsets in proptest::collection::vec(-2.0f64..2.0, 2..60),
            ) {
                let stats = detection_offset_stats(&offsets).unwrap();
                let total: usize = stats.histogram.iter().map(|(_, c)| c).sum();
                prop_assert_eq!(total, offsets.len());
                // Each offset lies inside its bin.
                for o in &offsets {
                    let hit = stats
                        .histogram
                        .iter()
                        .any(|(lo, _)| *o >= *lo - 1e-12 && *o < lo + stats.bin_width_s + 1e-12);
                    prop_assert!(hit);
                }
            }
        }
    }
}
