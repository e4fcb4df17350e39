//! Force-versus-distance profile over successful trajectories.

use serde::{Deserialize, Serialize};

use super::{EpisodeLog, EvalError};

pub const PROFILE_POINTS: usize = 100;

/// Natural cubic spline through `(x_i, y_i)` with strictly increasing `x`.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self, EvalError> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(EvalError::Usage(format!("spline needs >= 2 matching knots, got {} and {}", x.len(), y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EvalError::Usage("spline knots must be strictly increasing".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    /// Evaluates the spline; outside the knot range it extends the end
    /// segments.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// `n` uniform points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Resamples a sequence indexed by uniform progress onto `n` points.
pub fn resample(values: &[f64], n: usize) -> Result<Vec<f64>, EvalError> {
    if values.len() == 1 {
        return Ok(vec![values[0]; n]);
    }
    let s = NaturalSpline::new(&uniform_grid(values.len()), values)?;
    Ok(uniform_grid(n).into_iter().map(|t| s.eval(t)).collect())
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation; NaN when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Per-trajectory normalized sequences: force over its maximum, distance
/// over its first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrajectory {
    pub trial: usize,
    pub force: Vec<f64>,
    pub distance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceProfile {
    pub progress: Vec<f64>,
    pub mean_force: Vec<f64>,
    pub mean_distance: Vec<f64>,
    /// Spearman correlation of normalized force against negative
    /// normalized distance, pooled over every step of every trajectory.
    pub correlation: f64,
    pub trajectories: Vec<NormalizedTrajectory>,
    /// Successful trials left out because they never touched the wall.
    pub skipped_no_force: usize,
}

pub fn normalize_log(log: &EpisodeLog) -> Option<NormalizedTrajectory> {
    let force: Vec<f64> = log
        .records
        .iter()
        .map(|r| (r.force[0] * r.force[0] + r.force[1] * r.force[1] + r.force[2] * r.force[2]).sqrt())
        .collect();
    let fmax = force.iter().cloned().fold(0.0, f64::max);
    let d0 = log.records.first()?.distance;
    if fmax <= 0.0 || d0 <= 0.0 {
        return None;
    }
    Some(NormalizedTrajectory {
        trial: log.trial,
        force: force.iter().map(|f| f / fmax).collect(),
        distance: log.records.iter().map(|r| r.distance / d0).collect(),
    })
}

/// Averages normalized force and distance over successful logs on a
/// uniform progress grid.
pub fn force_distance_profile(logs: &[EpisodeLog]) -> Result<ForceProfile, EvalError> {
    let successes: Vec<&EpisodeLog> = logs.iter().filter(|l| l.success() && !l.records.is_empty()).collect();
    if successes.is_empty() {
        return Err(EvalError::EmptyProfile("no successful trajectories".into()));
    }
    let trajectories: Vec<NormalizedTrajectory> = successes.iter().filter_map(|l| normalize_log(l)).collect();
    let skipped_no_force = successes.len() - trajectories.len();
    if trajectories.is_empty() {
        return Err(EvalError::EmptyProfile("no successful trajectory recorded a contact force".into()));
    }
    let mut mean_force = vec![0.0; PROFILE_POINTS];
    let mut mean_distance = vec![0.0; PROFILE_POINTS];
    let mut pooled_f = Vec::new();
    let mut pooled_d = Vec::new();
    for t in &trajectories {
        for (acc, v) in mean_force.iter_mut().zip(resample(&t.force, PROFILE_POINTS)?) {
            *acc += v;
        }
        for (acc, v) in mean_distance.iter_mut().zip(resample(&t.distance, PROFILE_POINTS)?) {
            *acc += v;
        }
        pooled_f.extend_from_slice(&t.force);
        pooled_d.extend(t.distance.iter().map(|d| -d));
    }
    let n = trajectories.len() as f64;
    mean_force.iter_mut().for_each(|v| *v /= n);
    mean_distance.iter_mut().for_each(|v| *v /= n);
    Ok(ForceProfile {
        progress: uniform_grid(PROFILE_POINTS),
        mean_force,
        mean_distance,
        correlation: spearman(&pooled_f, &pooled_d),
        trajectories,
        skipped_no_force,
    })
}
