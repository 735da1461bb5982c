//! Tracking metrics.
//!
//! Errors are measured on position coordinates. For multi-target runs the
//! estimate-to-truth matching is fixed at the first time by minimal total
//! squared error and held for the whole run.
//!
//! ```text
//! RMSE_t   = sqrt(E|X̂_t − X_t|²)
//! avg RMSE = sqrt((1/T) ∫ E|X̂_t − X_t|² dt)
//! ```
//!
//! A track is OK when its own time-averaged error is at most `9 σ_W`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::jpda::permutations;

/// Everything recorded about one Monte-Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `truth[target][k]`.
    pub truth: Vec<Vec<DVector<f64>>>,
    /// `estimates[track][k]`, ensemble means.
    pub estimates: Vec<Vec<DVector<f64>>>,
    /// Flattened association beliefs per time.
    pub beta_trace: Vec<Vec<f64>>,
    pub position_indices: Vec<usize>,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        let k = self.times.len();
        if k == 0 {
            return Err(Error::Misaligned("record has no times".into()));
        }
        if self.truth.len() != self.estimates.len() || self.truth.is_empty() {
            return Err(Error::Misaligned("truth and estimate target counts differ".into()));
        }
        if self.truth.iter().chain(&self.estimates).any(|p| p.len() != k) {
            return Err(Error::Misaligned("trajectory length differs from time axis".into()));
        }
        if !self.beta_trace.is_empty() && self.beta_trace.len() != k {
            return Err(Error::Misaligned("belief trace length differs from time axis".into()));
        }
        Ok(())
    }

    fn position_sq_error(&self, target: usize, track: usize, k: usize) -> f64 {
        self.position_indices
            .iter()
            .map(|&p| (self.estimates[track][k][p] - self.truth[target][k][p]).powi(2))
            .sum()
    }

    /// `assignment[target]` = track matched to that target at time 0.
    pub fn assignment(&self) -> Vec<usize> {
        self.assignment_at(0)
    }

    /// Matching with minimal total squared position error at sample `k`.
    pub fn assignment_at(&self, k: usize) -> Vec<usize> {
        let n = self.truth.len();
        if n == 1 {
            return vec![0];
        }
        let perms = permutations(n.min(crate::jpda::MAX_TARGETS)).unwrap_or_else(|_| vec![(0..n).collect()]);
        perms
            .into_iter()
            .min_by(|a, b| {
                let cost = |p: &Vec<usize>| (0..n).map(|t| self.position_sq_error(t, p[t], k)).sum::<f64>();
                cost(a).total_cmp(&cost(b))
            })
            .expect("at least one permutation")
    }

    /// Squared position error `[target][k]` under the fixed assignment.
    pub fn squared_errors(&self) -> Vec<Vec<f64>> {
        self.squared_errors_with(&self.assignment())
    }

    pub fn squared_errors_with(&self, assignment: &[usize]) -> Vec<Vec<f64>> {
        (0..self.truth.len())
            .map(|t| {
                (0..self.times.len())
                    .map(|k| self.position_sq_error(t, assignment[t], k))
                    .collect()
            })
            .collect()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

/// `(1/T) ∫ f dt` by the trapezoid rule; the value itself for one sample.
fn time_average(times: &[f64], f: &[f64]) -> f64 {
    if times.len() < 2 {
        return f[0];
    }
    let integral: f64 = times
        .windows(2)
        .zip(f.windows(2))
        .map(|(t, y)| 0.5 * (y[0] + y[1]) * (t[1] - t[0]))
        .sum();
    integral / (times[times.len() - 1] - times[0])
}

fn check_aligned(records: &[RunRecord]) -> Result<()> {
    let first = records.first().ok_or_else(|| Error::Misaligned("no records".into()))?;
    for r in records {
        r.validate()?;
        if r.times.len() != first.times.len() || r.times.iter().zip(&first.times).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::Misaligned(format!("run {} has a different time axis", r.seed)));
        }
    }
    Ok(())
}

/// Pointwise RMSE over runs and targets.
pub fn rmse_curve(records: &[RunRecord]) -> Result<Vec<f64>> {
    check_aligned(records)?;
    let k = records[0].times.len();
    let mut sum = vec![0.0; k];
    let mut count = 0usize;
    for r in records {
        for errs in r.squared_errors() {
            for (s, e) in sum.iter_mut().zip(errs) {
                *s += e;
            }
            count += 1;
        }
    }
    Ok(sum.into_iter().map(|s| (s / count as f64).sqrt()).collect())
}

/// Average RMSE from an RMSE curve.
pub fn avg_rmse_from_curve(times: &[f64], curve: &[f64]) -> Result<f64> {
    if times.len() != curve.len() || times.is_empty() {
        return Err(Error::Misaligned("curve and time axis differ".into()));
    }
    let squared: Vec<f64> = curve.iter().map(|c| c * c).collect();
    Ok(time_average(times, &squared).sqrt())
}

/// Average RMSE straight from the records.
pub fn avg_rmse(records: &[RunRecord]) -> Result<f64> {
    check_aligned(records)?;
    let times = &records[0].times;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in records {
        for errs in r.squared_errors() {
            total += time_average(times, &errs);
            count += 1;
        }
    }
    Ok((total / count as f64).sqrt())
}

/// Time-averaged RMS position error of each target's track.
pub fn track_errors(record: &RunRecord) -> Result<Vec<f64>> {
    record.validate()?;
    Ok(record
        .squared_errors()
        .iter()
        .map(|e| time_average(&record.times, e).sqrt())
        .collect())
}

/// OK flag per track: error at most `9 σ_W`.
pub fn tracks_ok(record: &RunRecord, sigma_w: f64) -> Result<Vec<bool>> {
    Ok(track_errors(record)?.into_iter().map(|e| e <= 9.0 * sigma_w).collect())
}

/// Whether every track of the run is OK.
pub fn track_ok(record: &RunRecord, sigma_w: f64) -> Result<bool> {
    Ok(tracks_ok(record, sigma_w)?.into_iter().all(|ok| ok))
}

/// Percentage of OK tracks over all runs and targets.
pub fn percent_tracks_ok(records: &[RunRecord], sigma_w: f64) -> Result<f64> {
    let mut ok = 0usize;
    let mut total = 0usize;
    for r in records {
        for flag in tracks_ok(r, sigma_w)? {
            ok += flag as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Misaligned("no records".into()));
    }
    Ok(100.0 * ok as f64 / total as f64)
}

/// RMS position error over the samples in `[from, to]`. Tracks are matched
/// to targets at the first sample of the window, which matters when the
/// tracks start from one common point and the time-0 match is a tie.
pub fn window_rmse(record: &RunRecord, from: f64, to: f64) -> Result<f64> {
    record.validate()?;
    let inside: Vec<usize> = (0..record.times.len())
        .filter(|&k| record.times[k] >= from - 1e-12 && record.times[k] <= to + 1e-12)
        .collect();
    let first = *inside
        .first()
        .ok_or_else(|| Error::Misaligned("empty time window".into()))?;
    let errs = record.squared_errors_with(&record.assignment_at(first));
    let sum: f64 = errs.iter().flat_map(|e| inside.iter().map(move |&k| e[k])).sum();
    Ok((sum / (errs.len() * inside.len()) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn record(seed: u64, times: Vec<f64>, truth: Vec<Vec<f64>>, est: Vec<Vec<f64>>) -> RunRecord {
        let wrap = |paths: Vec<Vec<f64>>| {
            paths
                .into_iter()
                .map(|p| p.into_iter().map(|x| DVector::from_vec(vec![x, 0.0])).collect())
                .collect()
        };
        RunRecord {
            scenario: "t".into(),
            seed,
            times,
            truth: wrap(truth),
            estimates: wrap(est),
            beta_trace: Vec::new(),
            position_indices: vec![0],
        }
    }

    #[test]
    fn exact_estimates() {
        let r = record(
            0,
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0, 2.0, 3.0]],
            vec![vec![1.0, 2.0, 3.0]],
        );
        assert!(rmse_curve(std::slice::from_ref(&r)).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(avg_rmse(std::slice::from_ref(&r)).unwrap(), 0.0);
        assert!(track_ok(&r, 0.01).unwrap());
    }

    #[test]
    fn constant_offset() {
        let r = record(0, vec![0.0, 0.5, 1.0], vec![vec![0.0; 3]], vec![vec![-2.5; 3]]);
        assert!(rmse_curve(&[r.clone(), r.clone()])
            .unwrap()
            .iter()
            .all(|&x| (x - 2.5).abs() < 1e-15));
        assert_relative_eq!(avg_rmse(std::slice::from_ref(&r)).unwrap(), 2.5);
        let far = record(0, vec![0.0, 1.0], vec![vec![0.0; 2]], vec![vec![10.0; 2]]);
        assert!(!track_ok(&far, 1.0).unwrap());
    }

    #[test]
    fn two_runs_at_one_time() {
        let a = record(0, vec![0.0], vec![vec![0.0]], vec![vec![3.0]]);
        let b = record(1, vec![0.0], vec![vec![0.0]], vec![vec![4.0]]);
        assert_relative_eq!(rmse_curve(&[a, b]).unwrap()[0], 12.5f64.sqrt());
    }

    #[test]
    fn piecewise_error() {
        // Error 0 on the first half and c on the second, on a fine grid so
        // the trapezoid at the jump is negligible.
        let n = 20_001;
        let times: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let est: Vec<f64> = times.iter().map(|&t| if t > 0.5 { 3.0 } else { 0.0 }).collect();
        let r = record(0, times, vec![vec![0.0; n]], vec![est]);
        assert_relative_eq!(avg_rmse(&[r]).unwrap(), 3.0 / 2f64.sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn misaligned_records_fail() {
        let a = record(0, vec![0.0, 1.0], vec![vec![0.0; 2]], vec![vec![0.0; 2]]);
        let b = record(1, vec![0.0, 2.0], vec![vec![0.0; 2]], vec![vec![0.0; 2]]);
        assert!(matches!(rmse_curve(&[a.clone(), b]), Err(Error::Misaligned(_))));
        let short = record(2, vec![0.0, 1.0], vec![vec![0.0; 2]], vec![vec![0.0; 1]]);
        assert!(rmse_curve(&[a, short]).is_err());
    }

    #[test]
    fn assignment_is_resolved_at_start() {
        // Tracks are stored in swapped order.
        let r = record(
            0,
            vec![0.0, 1.0],
            vec![vec![-5.0, -5.0], vec![5.0, 5.0]],
            vec![vec![5.0, 6.0], vec![-5.0, -4.0]],
        );
        assert_eq!(r.assignment(), vec![1, 0]);
        assert_relative_eq!(rmse_curve(&[r]).unwrap()[1], 1.0);
    }

    #[test]
    fn window_matches_at_its_start() {
        // Both tracks start on one point; track 0 ends on target 1.
        let r = record(
            0,
            vec![0.0, 1.0, 2.0],
            vec![vec![-5.0, -5.0, -5.0], vec![5.0, 5.0, 5.0]],
            vec![vec![0.0, 5.0, 5.0], vec![0.0, -5.0, -5.0]],
        );
        assert_eq!(window_rmse(&r, 1.0, 2.0).unwrap(), 0.0);
        assert_relative_eq!(window_rmse(&r, 0.0, 0.0).unwrap(), 5.0);
        assert!(window_rmse(&r, 3.0, 4.0).is_err());
    }

    proptest! {
        #[test]
        fn curve_and_direct_paths_agree(
            errs in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 12), 1..6),
        ) {
            let times: Vec<f64> = (0..12).map(|k| k as f64 * 0.1).collect();
            let records: Vec<RunRecord> = errs
                .iter()
                .enumerate()
                .map(|(s, e)| record(s as u64, times.clone(), vec![vec![0.0; 12]], vec![e.clone()]))
                .collect();
            let curve = rmse_curve(&records).unwrap();
            let a = avg_rmse_from_curve(&times, &curve).unwrap();
            let b = avg_rmse(&records).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
