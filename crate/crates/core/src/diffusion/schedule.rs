use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Number of DDIM sampling / inversion steps.
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            steps: 50,
        }
    }
}

/// Linear-beta noise schedule plus the evenly spaced DDIM grid.
///
/// Latent *levels* run `0..=steps`: level 0 is the clean latent (`ᾱ = 1`)
/// and level `j > 0` sits at training timestep `grid[j - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub config: ScheduleConfig,
    betas: Vec<f64>,
    /// Indexed by training timestep, `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
    grid: Vec<usize>,
}

pub fn make_schedule(train_steps: usize, beta_min: f64, beta_max: f64, steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::new(ScheduleConfig {
        train_steps,
        beta_min,
        beta_max,
        steps,
    })
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            train_steps,
            beta_min,
            beta_max,
            steps,
        } = config;
        if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
            return Err(arg_err!("need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"));
        }
        if steps == 0 || steps > train_steps {
            return Err(arg_err!("need 1 <= steps <= train_steps, got {steps} of {train_steps}"));
        }
        let betas: Vec<f64> = (0..train_steps)
            .map(|i| {
                let f = if train_steps == 1 {
                    0.0
                } else {
                    i as f64 / (train_steps - 1) as f64
                };
                beta_min + f * (beta_max - beta_min)
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(train_steps + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        let grid = (1..=steps)
            .map(|j| ((j * train_steps) as f64 / steps as f64).round() as usize)
            .collect();
        Ok(Self {
            config,
            betas,
            alpha_bars,
            grid,
        })
    }

    /// Number of sampling steps `T`.
    pub fn steps(&self) -> usize {
        self.grid.len()
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ` at a training timestep (`0` gives 1).
    pub fn alpha_bar(&self, timestep: usize) -> f64 {
        self.alpha_bars[timestep]
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    /// Training timestep of latent level `j` (`j = 0` is the clean level).
    pub fn timestep(&self, level: usize) -> usize {
        if level == 0 {
            0
        } else {
            self.grid[level - 1]
        }
    }

    pub fn level_alpha_bar(&self, level: usize) -> f64 {
        self.alpha_bar(self.timestep(level))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_decrease_to_near_zero() {
        let s = NoiseSchedule::new(ScheduleConfig::default()).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 1.0).abs() < 1e-3);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
        assert!(s.alpha_bar(1000) < 0.01);
        // direct product
        let direct: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        assert!((s.alpha_bar(1000) - direct).abs() < 1e-15);
    }

    #[test]
    fn grid_is_increasing_and_ends_at_train_steps() {
        let s = make_schedule(1000, 1e-4, 0.02, 50).unwrap();
        assert_eq!(s.grid().len(), 50);
        assert!(s.grid().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*s.grid().last().unwrap(), 1000);
        let odd = make_schedule(1000, 1e-4, 0.02, 7).unwrap();
        assert!(odd.grid().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*odd.grid().last().unwrap(), 1000);
    }

    #[test]
    fn invalid_bounds() {
        assert!(make_schedule(1000, 0.01, 0.01, 50).is_err());
        assert!(make_schedule(1000, 0.02, 0.01, 50).is_err());
        assert!(make_schedule(10, 1e-4, 0.02, 50).is_err());
    }
}
