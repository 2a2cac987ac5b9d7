//! Replicate summaries.

/// Sample mean with standard error `s / √n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(samples: &[f64]) -> Summary {
    let n = samples.len();
    if n == 0 {
        return Summary { mean: 0.0, stderr: 0.0, n };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, stderr, n }
}

/// `mean(x) / mean(y)` with a delta-method standard error.
pub fn ratio_summary(x: &[f64], y: &[f64]) -> Summary {
    let sx = summarize(x);
    let sy = summarize(y);
    let rho = if sy.mean != 0.0 { sx.mean / sy.mean } else { f64::NAN };
    let resid: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - rho * b).collect();
    let se = summarize(&resid).stderr / sy.mean.abs();
    Summary { mean: rho, stderr: se, n: x.len() }
}
