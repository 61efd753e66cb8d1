//! Gaussian-process regression surrogate for configuration grades.
//!
//! Kernel: RBF(ℓ₁) + RationalQuadratic(ℓ₂, α) + White(σ²), on targets scaled
//! to unit variance. The constant mean is estimated in closed form
//! (generalized least squares) for every hyperparameter setting, which is
//! the maximum-likelihood value of a trainable constant mean.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optimize::nelder_mead;

const LENGTH_BOUNDS: (f64, f64) = (0.1, 100.0);
const MIXTURE_BOUNDS: (f64, f64) = (0.01, 100.0);
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);
const JITTER: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GprError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dimension {got}, expected {expected}")]
    Dimension { index: usize, got: usize, expected: usize },
    #[error("duplicate input at samples {0} and {1} with different targets")]
    ConflictingDuplicates(usize, usize),
    #[error("non-finite training data")]
    NonFinite,
    #[error("kernel matrix is singular even with jitter")]
    Singular,
}

/// Kernel hyperparameters, in normalized target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub rbf_length: f64,
    pub rq_length: f64,
    pub rq_alpha: f64,
    pub noise: f64,
}

impl Hyper {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let rbf = (-d2 / (2.0 * self.rbf_length.powi(2))).exp();
        let rq = (1.0 + d2 / (2.0 * self.rq_alpha * self.rq_length.powi(2))).powf(-self.rq_alpha);
        rbf + rq
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    /// Fit the white-noise variance within its bounds.
    Fit,
    /// Use this variance (normalized units); 0 gives an interpolating model.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GprOptions {
    pub restarts: usize,
    pub evals_per_restart: usize,
    pub seed: u64,
    pub noise: NoiseMode,
}

impl Default for GprOptions {
    fn default() -> Self {
        GprOptions {
            restarts: 8,
            evals_per_restart: 150,
            seed: 0,
            noise: NoiseMode::Fit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct GprModel {
    x: Vec<Vec<f64>>,
    hyper: Hyper,
    y_offset: f64,
    y_scale: f64,
    /// Constant mean in normalized units.
    mean: f64,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
    log_marginal_likelihood: f64,
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    mean: f64,
    weights: DVector<f64>,
    lml: f64,
}

fn factor(x: &[Vec<f64>], y: &DVector<f64>, h: &Hyper) -> Option<Factor> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        h.kernel(&x[i], &x[j]) + if i == j { h.noise } else { 0.0 }
    });
    let chol = Cholesky::new(k.clone())
        .or_else(|| Cholesky::new(k + DMatrix::identity(n, n) * JITTER))?;
    let ones = DVector::from_element(n, 1.0);
    let kinv_1 = chol.solve(&ones);
    let kinv_y = chol.solve(y);
    let denom = ones.dot(&kinv_1);
    if !(denom > 0.0) {
        return None;
    }
    let mean = ones.dot(&kinv_y) / denom;
    let centered = y - DVector::from_element(n, mean);
    let weights = chol.solve(&centered);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let lml = -0.5 * centered.dot(&weights)
        - 0.5 * log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some(Factor {
        chol,
        mean,
        weights,
        lml,
    })
}

impl GprModel {
    /// Fits hyperparameters by maximizing the log marginal likelihood.
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &GprOptions) -> Result<Self, GprError> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(GprError::TooFewSamples(n.min(y.len())));
        }
        let dim = x[0].len();
        for (index, row) in x.iter().enumerate() {
            if row.len() != dim {
                return Err(GprError::Dimension {
                    index,
                    got: row.len(),
                    expected: dim,
                });
            }
        }
        if !x.iter().flatten().chain(y).all(|v| v.is_finite()) {
            return Err(GprError::NonFinite);
        }
        for i in 0..n {
            for j in i + 1..n {
                if x[i] == x[j] && y[i] != y[j] {
                    return Err(GprError::ConflictingDuplicates(i, j));
                }
            }
        }

        let y_offset = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - y_offset).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if sd > 1e-12 { sd } else { 1.0 };
        let yn = DVector::from_iterator(n, y.iter().map(|v| (v - y_offset) / y_scale));

        let fit_noise = opts.noise == NoiseMode::Fit;
        let fixed_noise = match opts.noise {
            NoiseMode::Fixed(v) => v.max(0.0),
            NoiseMode::Fit => 0.0,
        };
        let unpack = |p: &[f64]| Hyper {
            rbf_length: p[0].exp(),
            rq_length: p[1].exp(),
            rq_alpha: p[2].exp(),
            noise: if fit_noise { p[3].exp() } else { fixed_noise },
        };
        let mut lo = vec![LENGTH_BOUNDS.0.ln(), LENGTH_BOUNDS.0.ln(), MIXTURE_BOUNDS.0.ln()];
        let mut hi = vec![LENGTH_BOUNDS.1.ln(), LENGTH_BOUNDS.1.ln(), MIXTURE_BOUNDS.1.ln()];
        if fit_noise {
            lo.push(NOISE_BOUNDS.0.ln());
            hi.push(NOISE_BOUNDS.1.ln());
        }

        let mut objective = |p: &[f64]| match factor(x, &yn, &unpack(p)) {
            Some(f) => -f.lml,
            None => f64::INFINITY,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for r in 0..opts.restarts.max(1) {
            let start: Vec<f64> = if r == 0 {
                let mut s = vec![0.0, 0.0, 0.0];
                if fit_noise {
                    s.push(1e-2f64.ln());
                }
                s
            } else {
                lo.iter().zip(&hi).map(|(l, h)| rng.gen_range(*l..*h)).collect()
            };
            let (p, v) = nelder_mead(&mut objective, &start, &lo, &hi, opts.evals_per_restart);
            if v.is_finite() && best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((p, v));
            }
        }
        let (p, _) = best.ok_or(GprError::Singular)?;
        let hyper = unpack(&p);
        let f = factor(x, &yn, &hyper).ok_or(GprError::Singular)?;
        Ok(GprModel {
            x: x.to_vec(),
            hyper,
            y_offset,
            y_scale,
            mean: f.mean,
            chol: f.chol,
            weights: f.weights,
            log_marginal_likelihood: f.lml,
        })
    }

    /// Posterior mean and standard deviation of the latent function.
    pub fn predict(&self, q: &[f64]) -> Result<Prediction, GprError> {
        let dim = self.x[0].len();
        if q.len() != dim {
            return Err(GprError::Dimension {
                index: 0,
                got: q.len(),
                expected: dim,
            });
        }
        let kstar = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.hyper.kernel(xi, q)));
        let mean_n = self.mean + kstar.dot(&self.weights);
        let v = self.chol.solve(&kstar);
        let var_n = (self.hyper.kernel(q, q) - kstar.dot(&v)).max(0.0);
        Ok(Prediction {
            mean: self.y_offset + self.y_scale * mean_n,
            std: self.y_scale * var_n.sqrt(),
        })
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    /// White-noise standard deviation in target units.
    pub fn noise_std(&self) -> f64 {
        self.y_scale * self.hyper.noise.sqrt()
    }

    /// Constant mean in target units.
    pub fn constant_mean(&self) -> f64 {
        self.y_offset + self.y_scale * self.mean
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}
