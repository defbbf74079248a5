use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `t_base / t_ours`.
pub fn compute_speedup(t_base: f64, t_ours: f64) -> Result<f64> {
    if !(t_base > 0.0 && t_ours > 0.0) {
        return Err(Error::Argument(format!("times must be positive, got {t_base} and {t_ours}")));
    }
    Ok(t_base / t_ours)
}

/// `1 - q_ours / q_base`.
pub fn compute_sampling_reduction(q_base: u64, q_ours: u64) -> Result<f64> {
    if q_base == 0 {
        return Err(Error::Argument("baseline query count is zero".into()));
    }
    Ok(1.0 - q_ours as f64 / q_base as f64)
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
}

impl MeanCi {
    pub const Z95: f64 = 1.959963984540054;

    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanCi { n, mean: f64::NAN, half_width: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Self::Z95 * (var / n as f64).sqrt()
        };
        MeanCi { n, mean, half_width }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}
