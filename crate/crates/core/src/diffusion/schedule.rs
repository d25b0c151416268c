use crate::error::{Error, Result};
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

/// Cosine noise schedule: `alpha_bar(t) = f(t) / f(0)` with
/// `f(t) = cos^2(((t / N) + s) / (1 + s) * pi / 2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub offset: f64,
    alpha_bar: Vec<f64>,
}

pub fn cosine_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("a noise schedule needs at least one step"));
    }
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64) + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let alpha_bar = (0..=steps).map(|t| f(t) / f0).collect();
    Ok(NoiseSchedule { steps, offset, alpha_bar })
}

impl NoiseSchedule {
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t.min(self.steps)]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).max(0.0).sqrt()
    }

    /// `count + 1` uniformly spaced timesteps `0, N/count, ..., N`.
    pub fn inference_steps(&self, count: usize) -> Result<Vec<usize>> {
        if count == 0 || count > self.steps {
            return Err(Error::invalid(format!(
                "inference steps must lie in 1..={}, got {count}",
                self.steps
            )));
        }
        Ok((0..=count).map(|i| i * self.steps / count).collect())
    }

    /// `sqrt(alpha_bar) x + sqrt(1 - alpha_bar) eps`.
    pub fn add_noise(&self, x: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        let a = self.alpha_bar(t);
        Ok(((x * a.sqrt())? + (eps * (1.0 - a).max(0.0).sqrt())?)?)
    }

    /// DDIM update from `t` to `t_prev < t` given the predicted clean sample.
    /// With `eta = 0` the update is deterministic and `noise` is ignored.
    pub fn ddim_step(&self, x_t: &Tensor, x0: &Tensor, t: usize, t_prev: usize, eta: f64, noise: Option<&Tensor>) -> Result<Tensor> {
        if t_prev >= t {
            return Err(Error::invalid(format!("DDIM step must go backwards, got {t} -> {t_prev}")));
        }
        let a_t = self.alpha_bar(t);
        let a_p = self.alpha_bar(t_prev);
        let eps = if a_t < 1.0 {
            ((x_t - (x0 * a_t.sqrt())?)? / (1.0 - a_t).sqrt())?
        } else {
            x_t.zeros_like()?
        };
        let sigma = if eta > 0.0 && a_t < 1.0 {
            eta * ((1.0 - a_p) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_p).max(0.0).sqrt()
        } else {
            0.0
        };
        let dir = (1.0 - a_p - sigma * sigma).max(0.0).sqrt();
        let mut out = ((x0 * a_p.sqrt())? + (eps * dir)?)?;
        if sigma > 0.0 {
            let z = noise.ok_or_else(|| Error::invalid("stochastic DDIM needs a noise tensor"))?;
            out = (out + (z * sigma)?)?;
        }
        Ok(out)
    }
}

/// `(1 - s) * uncond + s * cond`, exact at `s = 0` and `s = 1`.
pub fn cfg_combine(uncond: &Tensor, cond: &Tensor, scale: f64) -> Result<Tensor> {
    Ok(((uncond * (1.0 - scale))? + (cond * scale)?)?)
}
