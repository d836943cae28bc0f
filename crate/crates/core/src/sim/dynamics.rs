use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State dynamics `dX = mu(t, X) dt + sigma(t, X) dW (+ jumps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// Componentwise geometric Brownian motion `dX_k / X_k = drift_k dt + vol_k dW_k`,
    /// simulated with the exact log-space transition.
    Gbm {
        drift: Vec<f64>,
        vol: Vec<f64>,
        x0: Vec<f64>,
    },
    /// `dX = (A_mu X + b_mu) dt + sum_k (A_sigma^k X + b_sigma^k) dW^k`, Euler-Maruyama.
    AffineIto {
        a_mu: Vec<Vec<f64>>,
        b_mu: Vec<f64>,
        a_sigma: Vec<Vec<Vec<f64>>>,
        b_sigma: Vec<Vec<f64>>,
        x0: Vec<f64>,
    },
    /// `d log X = kappa (mean - log X) dt + vol dW + J dN` with diagonal `kappa`
    /// and `vol`, Poisson counts `N` of intensity `jump_intensity` and Gaussian
    /// log-jump sizes. Simulated exactly in log space.
    ExpOuJump {
        kappa: Vec<f64>,
        mean: Vec<f64>,
        vol: Vec<f64>,
        jump_intensity: Vec<f64>,
        jump_mean: Vec<f64>,
        jump_std: Vec<f64>,
        x0: Vec<f64>,
    },
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        self.x0().len()
    }

    pub fn x0(&self) -> &[f64] {
        match self {
            Dynamics::Gbm { x0, .. } | Dynamics::AffineIto { x0, .. } | Dynamics::ExpOuJump { x0, .. } => x0,
        }
    }

    pub fn has_jumps(&self) -> bool {
        matches!(self, Dynamics::ExpOuJump { .. })
    }

    /// Poisson intensities per component (zeros for continuous models).
    pub fn jump_intensity(&self) -> Vec<f64> {
        match self {
            Dynamics::ExpOuJump { jump_intensity, .. } => jump_intensity.clone(),
            _ => vec![0.0; self.dim()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("state dimension must be at least 1"));
        }
        let check_len = |name: &str, len: usize| {
            if len != d {
                Err(Error::config(format!(
                    "dimension mismatch: {name} has length {len}, expected {d}"
                )))
            } else {
                Ok(())
            }
        };
        let all_finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Dynamics::Gbm { drift, vol, x0 } => {
                check_len("drift", drift.len())?;
                check_len("vol", vol.len())?;
                if !all_finite(drift) || !all_finite(vol) {
                    return Err(Error::config("GBM parameters must be finite"));
                }
                if vol.iter().any(|&s| s < 0.0) {
                    return Err(Error::config("GBM volatilities must be non-negative"));
                }
                if x0.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::config("GBM initial state must be positive"));
                }
            }
            Dynamics::AffineIto {
                a_mu,
                b_mu,
                a_sigma,
                b_sigma,
                ..
            } => {
                check_len("a_mu rows", a_mu.len())?;
                for row in a_mu {
                    check_len("a_mu row", row.len())?;
                }
                check_len("b_mu", b_mu.len())?;
                check_len("a_sigma", a_sigma.len())?;
                for m in a_sigma {
                    check_len("a_sigma^k rows", m.len())?;
                    for row in m {
                        check_len("a_sigma^k row", row.len())?;
                    }
                }
                check_len("b_sigma", b_sigma.len())?;
                for row in b_sigma {
                    check_len("b_sigma^k", row.len())?;
                }
            }
            Dynamics::ExpOuJump {
                kappa,
                mean,
                vol,
                jump_intensity,
                jump_mean,
                jump_std,
                x0,
            } => {
                for (name, v) in [
                    ("kappa", kappa),
                    ("mean", mean),
                    ("vol", vol),
                    ("jump_intensity", jump_intensity),
                    ("jump_mean", jump_mean),
                    ("jump_std", jump_std),
                ] {
                    check_len(name, v.len())?;
                    if !all_finite(v) {
                        return Err(Error::config(format!("{name} must be finite")));
                    }
                }
                if vol.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::config("exp-OU diffusion matrix must be non-degenerate"));
                }
                if kappa.iter().any(|&k| k < 0.0)
                    || jump_intensity.iter().any(|&l| l < 0.0)
                    || jump_std.iter().any(|&s| s < 0.0)
                {
                    return Err(Error::config(
                        "exp-OU mean reversion, intensities and jump std must be non-negative",
                    ));
                }
                if x0.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::config("exp-OU initial state must be positive"));
                }
            }
        }
        if !self.x0().iter().all(|x| x.is_finite()) {
            return Err(Error::config("initial state must be finite"));
        }
        Ok(())
    }

    /// Diffusion matrix `sigma(t, x)` (rows: state components, columns: noise).
    pub fn sigma(&self, _t: f64, x: &[f64]) -> Array2<f64> {
        let d = self.dim();
        let mut s = Array2::zeros((d, d));
        match self {
            Dynamics::Gbm { vol, .. } => {
                for k in 0..d {
                    s[[k, k]] = vol[k] * x[k];
                }
            }
            Dynamics::ExpOuJump { vol, .. } => {
                // Ito on X = exp(Y): the Brownian loading is X_k vol_k.
                for k in 0..d {
                    s[[k, k]] = vol[k] * x[k];
                }
            }
            Dynamics::AffineIto {
                a_sigma, b_sigma, ..
            } => {
                for col in 0..d {
                    for row in 0..d {
                        let lin: f64 = (0..d).map(|l| a_sigma[col][row][l] * x[l]).sum();
                        s[[row, col]] = lin + b_sigma[col][row];
                    }
                }
            }
        }
        s
    }

    /// Advances one substep of length `dt`, writing the Brownian increment to
    /// `dw`, Poisson counts to `dn` (jump models only) and the new state to `next`.
    ///
    /// The draw order per step is fixed: `d` normals for `dW`, then model
    /// specific extras. Reproducibility of paths depends on it.
    pub(crate) fn advance<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        dt: f64,
        rng: &mut R,
        dw: &mut [f64],
        dn: Option<&mut [f64]>,
        next: &mut [f64],
    ) {
        let d = x.len();
        let sqrt_dt = dt.sqrt();
        for w in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sqrt_dt * z;
        }
        match self {
            Dynamics::Gbm { drift, vol, .. } => {
                for k in 0..d {
                    let s = vol[k];
                    next[k] = x[k] * ((drift[k] - 0.5 * s * s) * dt + s * dw[k]).exp();
                }
            }
            Dynamics::AffineIto {
                a_mu,
                b_mu,
                a_sigma,
                b_sigma,
                ..
            } => {
                for row in 0..d {
                    let mu: f64 = (0..d).map(|l| a_mu[row][l] * x[l]).sum::<f64>() + b_mu[row];
                    let mut diffusion = 0.0;
                    for col in 0..d {
                        let lin: f64 = (0..d).map(|l| a_sigma[col][row][l] * x[l]).sum();
                        diffusion += (lin + b_sigma[col][row]) * dw[col];
                    }
                    next[row] = x[row] + mu * dt + diffusion;
                }
            }
            Dynamics::ExpOuJump {
                kappa,
                mean,
                vol,
                jump_intensity,
                jump_mean,
                jump_std,
                ..
            } => {
                let dn = dn.expect("jump model requires a Poisson increment buffer");
                for k in 0..d {
                    let kap = kappa[k];
                    // Joint law of (dW, int_0^dt e^{-kappa (dt - s)} dW_s).
                    let (decay, ou_noise) = if kap * dt < 1e-12 {
                        let _: f64 = rng.sample(StandardNormal);
                        (1.0, dw[k])
                    } else {
                        let decay = (-kap * dt).exp();
                        let var_i = (1.0 - (-2.0 * kap * dt).exp()) / (2.0 * kap);
                        let cov = (1.0 - decay) / kap;
                        let beta = cov / dt;
                        let resid = (var_i - beta * cov).max(0.0).sqrt();
                        let z: f64 = rng.sample(StandardNormal);
                        (decay, beta * dw[k] + resid * z)
                    };
                    let y = x[k].ln();
                    let mut y_next = decay * y + (1.0 - decay) * mean[k] + vol[k] * ou_noise;
                    let rate = jump_intensity[k] * dt;
                    let count = if rate > 0.0 {
                        Poisson::new(rate).map(|p| p.sample(rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    };
                    dn[k] = count;
                    for _ in 0..count as u64 {
                        let z: f64 = rng.sample(StandardNormal);
                        y_next += jump_mean[k] + jump_std[k] * z;
                    }
                    next[k] = y_next.exp();
                }
            }
        }
    }
}
