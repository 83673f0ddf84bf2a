use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use crate::Vec2;

/// Band-limited Gaussian forcing applied to a set of nodes in x and y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub nodes: Vec<usize>,
    /// Passband `(omega_lo, omega_hi)` in rad/s.
    pub band: (f64, f64),
    /// RMS force per channel, N.
    pub amplitude: f64,
    pub seed: u64,
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.band;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Invalid(format!("passband ({lo}, {hi}) must satisfy 0 < lo < hi")));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Invalid(format!("amplitude {} must be positive", self.amplitude)));
        }
        Ok(())
    }
}

/// Checks that `times` is a uniform grid and returns its step.
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Invalid("time grid needs at least two samples".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Invalid("time grid must be increasing".into()));
    }
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::Invalid(format!("time grid is not uniform at sample {k}")));
        }
    }
    Ok(dt)
}

/// Angular frequency of DFT bin `k` on an `n`-sample grid with step `dt`.
pub fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let folded = if k <= n / 2 { k } else { n - k };
    std::f64::consts::TAU * folded as f64 / (n as f64 * dt)
}

/// Gaussian white noise masked to the passband in the frequency domain and
/// rescaled to the requested RMS. Result is indexed `[step][node]`.
pub fn banded_white_noise(times: &[f64], nodes: usize, spec: &ForcingSpec) -> Result<Vec<Vec<Vec2>>> {
    spec.validate()?;
    let dt = uniform_step(times)?;
    let nyquist = std::f64::consts::PI / dt;
    if spec.band.1 > nyquist {
        return Err(Error::BandOutsideNyquist {
            omega_hi: spec.band.1,
            nyquist,
        });
    }
    if let Some(&bad) = spec.nodes.iter().find(|&&i| i >= nodes) {
        return Err(Error::Invalid(format!("forced node {bad} out of range")));
    }
    let n = times.len();
    let keep: Vec<bool> = (0..n)
        .map(|k| {
            let w = bin_frequency(k, n, dt);
            w >= spec.band.0 && w <= spec.band.1
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::Invalid("passband contains no frequency bin".into()));
    }

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![vec![Vec2::zeros(); nodes]; n];
    for &node in &spec.nodes {
        for d in 0..2 {
            let mut buf: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
                .collect();
            forward.process(&mut buf);
            for (c, &k) in buf.iter_mut().zip(&keep) {
                if !k {
                    *c = Complex::new(0.0, 0.0);
                }
            }
            inverse.process(&mut buf);
            let rms = (buf.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64).sqrt();
            let scale = if rms > 0.0 { spec.amplitude / rms } else { 0.0 };
            for (step, c) in buf.iter().enumerate() {
                out[step][node][d] = c.re * scale;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    fn spec() -> ForcingSpec {
        ForcingSpec {
            nodes: vec![1, 3],
            band: (0.5, 4.0),
            amplitude: 1.0,
            seed: 11,
        }
    }

    #[test]
    fn spectrum_vanishes_outside_band() {
        let times = grid(4000, 0.01);
        let f = banded_white_noise(&times, 4, &spec()).unwrap();
        // plain DFT of one channel, independent of the FFT used to build it
        let n = times.len();
        let x: Vec<f64> = f.iter().map(|row| row[1].x).collect();
        let mut peak: f64 = 0.0;
        let mut outside: f64 = 0.0;
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -std::f64::consts::TAU * (k * t % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let mag = (re * re + im * im).sqrt();
            let w = bin_frequency(k, n, 0.01);
            if w >= 0.5 && w <= 4.0 {
                peak = peak.max(mag);
            } else {
                outside = outside.max(mag);
            }
        }
        assert!(outside <= 1e-10 * peak, "leak {outside} vs {peak}");
    }

    #[test]
    fn unforced_nodes_are_exactly_zero() {
        let f = banded_white_noise(&grid(500, 0.01), 4, &spec()).unwrap();
        assert!(f.iter().all(|row| row[0] == Vec2::zeros() && row[2] == Vec2::zeros()));
        let rms = (f.iter().map(|r| r[3].y * r[3].y).sum::<f64>() / 500.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let t = grid(300, 0.01);
        assert_eq!(
            banded_white_noise(&t, 4, &spec()).unwrap(),
            banded_white_noise(&t, 4, &spec()).unwrap()
        );
    }

    #[test]
    fn band_above_nyquist_is_rejected() {
        let mut s = spec();
        s.band = (0.5, 400.0);
        assert!(matches!(
            banded_white_noise(&grid(100, 0.01), 4, &s),
            Err(Error::BandOutsideNyquist { .. })
        ));
    }
}
