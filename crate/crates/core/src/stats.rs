//! Order-independent reductions and Monte Carlo summaries.

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how work was scheduled to produce them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Point estimate with a Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn ci(&self, width: f64) -> (f64, f64) {
        (self.mean - width * self.std_error, self.mean + width * self.std_error)
    }
}

/// Sample mean with the classical `s / sqrt(n)` standard error.
pub fn mean_estimate(values: &[f64]) -> Estimate {
    Estimate {
        mean: mean(values),
        std_error: (variance(values) / values.len() as f64).sqrt(),
    }
}

/// Batch-means estimate: `values` is split into `batches` contiguous groups,
/// the standard error is that of the mean of the batch means.
pub fn batch_means(values: &[f64], batches: usize) -> Estimate {
    let batches = batches.max(2).min(values.len().max(1));
    let size = values.len() / batches;
    if size == 0 {
        return mean_estimate(values);
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let end = if b + 1 == batches { values.len() } else { (b + 1) * size };
            mean(&values[b * size..end])
        })
        .collect();
    Estimate {
        mean: mean(values),
        std_error: (variance(&means) / batches as f64).sqrt(),
    }
}
