use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{GraphState, ObservationMask};
use crate::Vec2;

/// Simulated response of one structure plus its corrupted, sparse observations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub times: Vec<f64>,
    pub true_states: Vec<GraphState>,
    /// `[step][node]`
    pub true_accelerations: Vec<Vec<Vec2>>,
    /// Applied loads, `[step][node]`.
    pub true_forces: Vec<Vec<Vec2>>,
    /// `[step][k]` for the k-th measured node of `mask`.
    pub observed_accelerations: Vec<Vec<Vec2>>,
    /// Measured load input, `[step][node]`. Loads are a known system input at
    /// every node: load cells where forcing acts, exactly zero elsewhere.
    pub observed_forces: Vec<Vec<Vec2>>,
    pub mask: ObservationMask,
    /// Injected variance per measured acceleration channel, `[k]`.
    pub acceleration_noise_variance: Vec<Vec2>,
    /// Injected variance per force channel, `[node]`.
    pub force_noise_variance: Vec<Vec2>,
}

impl TrajectoryDataset {
    /// Noise-free dataset with every node measured.
    pub fn from_truth(
        times: Vec<f64>,
        true_states: Vec<GraphState>,
        true_accelerations: Vec<Vec<Vec2>>,
        true_forces: Vec<Vec<Vec2>>,
    ) -> Self {
        let n = true_states.first().map_or(0, GraphState::node_count);
        TrajectoryDataset {
            observed_accelerations: true_accelerations.clone(),
            observed_forces: true_forces.clone(),
            mask: ObservationMask::all(n),
            acceleration_noise_variance: vec![Vec2::zeros(); n],
            force_noise_variance: vec![Vec2::zeros(); n],
            times,
            true_states,
            true_accelerations,
            true_forces,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.mask.measured.len()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Keeps every `stride`-th sample, up to and including `t_end`.
    pub fn subsample(&self, stride: usize, t_end: f64) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .step_by(stride.max(1))
            .filter(|&k| self.times[k] <= t_end + 1e-9)
            .collect();
        let pick = |v: &Vec<Vec<Vec2>>| keep.iter().map(|&k| v[k].clone()).collect();
        TrajectoryDataset {
            times: keep.iter().map(|&k| self.times[k]).collect(),
            true_states: keep.iter().map(|&k| self.true_states[k].clone()).collect(),
            true_accelerations: pick(&self.true_accelerations),
            true_forces: pick(&self.true_forces),
            observed_accelerations: pick(&self.observed_accelerations),
            observed_forces: pick(&self.observed_forces),
            mask: self.mask.clone(),
            acceleration_noise_variance: self.acceleration_noise_variance.clone(),
            force_noise_variance: self.force_noise_variance.clone(),
        }
    }

    /// Full-length observed acceleration of node `i`, or `None` if unmeasured.
    pub fn observed_acceleration(&self, step: usize, node: usize) -> Option<Vec2> {
        let k = self.mask.measured_nodes().iter().position(|&m| m == node)?;
        Some(self.observed_accelerations[step][k])
    }

    /// Residual variance per measured node and direction, `m^2 s_a^2 + s_f^2`.
    pub fn residual_variance(&self, masses: &[f64]) -> Vec<Vec2> {
        self.mask
            .measured_nodes()
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                masses[i] * masses[i] * self.acceleration_noise_variance[k]
                    + self.force_noise_variance[i]
            })
            .collect()
    }
}

fn channel_power(series: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = series.fold((0.0, 0usize), |(s, c), x| (s + x * x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Adds Gaussian noise with variance `power / snr` to every acceleration and
/// force channel and keeps accelerations only at measured nodes. `snr = None`
/// means noise-free.
pub fn corrupt_and_mask(
    truth: &TrajectoryDataset,
    snr: Option<f64>,
    mask: &ObservationMask,
    seed: u64,
) -> Result<TrajectoryDataset> {
    if let Some(s) = snr {
        if !(s > 0.0) {
            return Err(Error::Invalid(format!("SNR {s} must be positive")));
        }
    }
    let n = truth.true_states.first().map_or(0, GraphState::node_count);
    if mask.measured.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: mask.measured.len(),
        });
    }
    let steps = truth.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |series: &dyn Fn(usize) -> f64| -> (Vec<f64>, f64) {
        let power = channel_power((0..steps).map(series));
        let variance = snr.map_or(0.0, |s| power / s);
        let values = if variance > 0.0 {
            let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
            (0..steps).map(|k| series(k) + normal.sample(&mut rng)).collect()
        } else {
            (0..steps).map(series).collect()
        };
        (values, variance)
    };

    let measured = mask.measured_nodes();
    let mut observed_accelerations = vec![vec![Vec2::zeros(); measured.len()]; steps];
    let mut acceleration_noise_variance = vec![Vec2::zeros(); measured.len()];
    for (k, &i) in measured.iter().enumerate() {
        for d in 0..2 {
            let (values, var) = noisy(&|s| truth.true_accelerations[s][i][d]);
            acceleration_noise_variance[k][d] = var;
            for (s, v) in values.into_iter().enumerate() {
                observed_accelerations[s][k][d] = v;
            }
        }
    }
    let mut observed_forces = vec![vec![Vec2::zeros(); n]; steps];
    let mut force_noise_variance = vec![Vec2::zeros(); n];
    for i in 0..n {
        for d in 0..2 {
            let (values, var) = noisy(&|s| truth.true_forces[s][i][d]);
            force_noise_variance[i][d] = var;
            for (s, v) in values.into_iter().enumerate() {
                observed_forces[s][i][d] = v;
            }
        }
    }
    Ok(TrajectoryDataset {
        times: truth.times.clone(),
        true_states: truth.true_states.clone(),
        true_accelerations: truth.true_accelerations.clone(),
        true_forces: truth.true_forces.clone(),
        observed_accelerations,
        observed_forces,
        mask: mask.clone(),
        acceleration_noise_variance,
        force_noise_variance,
    })
}

/// Columnar text layout, one row per sample:
///
/// `time` then, for every node, `u_x u_y v_x v_y a_x a_y f_x f_y` (truth),
/// `ya_x ya_y yf_x yf_y` (observations; `nan` accelerations where unmeasured)
/// and the `observed` flag (1/0).
///
/// The header carries `# nodes`, `# measured`, `# acc_var` and `# force_var`
/// lines, then the column names.
const PER_NODE: usize = 13;

impl TrajectoryDataset {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.node_count();
        let measured = self.mask.measured_nodes();
        writeln!(w, "# piggo trajectory v1")?;
        writeln!(w, "# nodes {n}")?;
        let flags: Vec<String> = self.mask.measured.iter().map(|&m| (m as u8).to_string()).collect();
        writeln!(w, "# measured {}", flags.join(" "))?;
        let mut acc = String::new();
        for v in &self.acceleration_noise_variance {
            write!(acc, " {:e} {:e}", v.x, v.y).expect("string write");
        }
        writeln!(w, "# acc_var{acc}")?;
        let mut frc = String::new();
        for v in &self.force_noise_variance {
            write!(frc, " {:e} {:e}", v.x, v.y).expect("string write");
        }
        writeln!(w, "# force_var{frc}")?;
        let mut cols = vec!["time".to_string()];
        for i in 0..n {
            for c in ["u_x", "u_y", "v_x", "v_y", "a_x", "a_y", "f_x", "f_y", "ya_x", "ya_y", "yf_x", "yf_y", "observed"] {
                cols.push(format!("{c}_{i}"));
            }
        }
        writeln!(w, "{}", cols.join(" "))?;
        for s in 0..self.len() {
            let mut line = format!("{:e}", self.times[s]);
            let st = &self.true_states[s];
            for i in 0..n {
                let (u, v) = (st.displacements[i], st.velocities[i]);
                let (a, f) = (self.true_accelerations[s][i], self.true_forces[s][i]);
                let ya = measured
                    .iter()
                    .position(|&m| m == i)
                    .map_or(Vec2::new(f64::NAN, f64::NAN), |k| self.observed_accelerations[s][k]);
                let yf = self.observed_forces[s][i];
                for x in [u.x, u.y, v.x, v.y, a.x, a.y, f.x, f.y, ya.x, ya.y, yf.x, yf.y] {
                    write!(line, " {x:e}").expect("string write");
                }
                write!(line, " {}", self.mask.measured[i] as u8).expect("string write");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: std::io::Read>(r: R) -> Result<Self> {
        let mut nodes = None;
        let mut measured = None;
        let mut acc_var = None;
        let mut force_var = None;
        let mut header_done = false;
        let mut ds = TrajectoryDataset {
            times: vec![],
            true_states: vec![],
            true_accelerations: vec![],
            true_forces: vec![],
            observed_accelerations: vec![],
            observed_forces: vec![],
            mask: ObservationMask { measured: vec![] },
            acceleration_noise_variance: vec![],
            force_noise_variance: vec![],
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
        };
        let pairs = |vals: Vec<f64>| -> Vec<Vec2> { vals.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect() };
        for line in BufReader::new(r).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                match it.next() {
                    Some("nodes") => nodes = Some(parse(it.next().unwrap_or(""))? as usize),
                    Some("measured") => measured = Some(it.map(|t| t == "1").collect::<Vec<_>>()),
                    Some("acc_var") => acc_var = Some(pairs(it.map(parse).collect::<Result<_>>()?)),
                    Some("force_var") => force_var = Some(pairs(it.map(parse).collect::<Result<_>>()?)),
                    _ => {}
                }
                continue;
            }
            if !header_done {
                header_done = true;
                continue;
            }
            let n = nodes.ok_or_else(|| Error::Parse("missing `# nodes` header".into()))?;
            let vals: Vec<f64> = line.split_whitespace().map(parse).collect::<Result<_>>()?;
            if vals.len() != 1 + PER_NODE * n {
                return Err(Error::Parse(format!(
                    "row has {} columns, expected {}",
                    vals.len(),
                    1 + PER_NODE * n
                )));
            }
            ds.times.push(vals[0]);
            let mut st = GraphState::zeros(n);
            let mut acc = vec![Vec2::zeros(); n];
            let mut frc = vec![Vec2::zeros(); n];
            let mut yacc = Vec::new();
            let mut yfrc = vec![Vec2::zeros(); n];
            for i in 0..n {
                let c = &vals[1 + PER_NODE * i..1 + PER_NODE * (i + 1)];
                st.displacements[i] = Vec2::new(c[0], c[1]);
                st.velocities[i] = Vec2::new(c[2], c[3]);
                acc[i] = Vec2::new(c[4], c[5]);
                frc[i] = Vec2::new(c[6], c[7]);
                if c[12] == 1.0 {
                    yacc.push(Vec2::new(c[8], c[9]));
                }
                yfrc[i] = Vec2::new(c[10], c[11]);
            }
            ds.true_states.push(st);
            ds.true_accelerations.push(acc);
            ds.true_forces.push(frc);
            ds.observed_accelerations.push(yacc);
            ds.observed_forces.push(yfrc);
        }
        ds.mask = ObservationMask {
            measured: measured.ok_or_else(|| Error::Parse("missing `# measured` header".into()))?,
        };
        ds.acceleration_noise_variance = acc_var.unwrap_or_default();
        ds.force_noise_variance = force_var.unwrap_or_default();
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_text(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_text(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sparsity_mask;

    fn sine_truth(steps: usize, nodes: usize) -> TrajectoryDataset {
        let times: Vec<f64> = (0..steps).map(|k| k as f64 * 0.01).collect();
        let states = vec![GraphState::zeros(nodes); steps];
        let acc: Vec<Vec<Vec2>> = times
            .iter()
            .map(|t| (0..nodes).map(|i| Vec2::new((3.0 * t + i as f64).sin(), (2.0 * t).cos())).collect())
            .collect();
        let frc: Vec<Vec<Vec2>> = times
            .iter()
            .map(|t| (0..nodes).map(|i| if i == 0 { Vec2::new(t.sin(), 0.5) } else { Vec2::zeros() }).collect())
            .collect();
        TrajectoryDataset::from_truth(times, states, acc, frc)
    }

    #[test]
    fn infinite_snr_keeps_truth() {
        let truth = sine_truth(100, 4);
        let mask = sparsity_mask(4, 50.0).unwrap();
        let d = corrupt_and_mask(&truth, None, &mask, 0).unwrap();
        assert_eq!(d.observed_forces, truth.true_forces);
        for s in 0..100 {
            assert_eq!(d.observed_accelerations[s], vec![truth.true_accelerations[s][1], truth.true_accelerations[s][3]]);
        }
    }

    #[test]
    fn empirical_snr_near_target() {
        let truth = sine_truth(2000, 3);
        let d = corrupt_and_mask(&truth, Some(25.0), &ObservationMask::all(3), 9).unwrap();
        for i in 0..3 {
            for dir in 0..2 {
                let signal = channel_power((0..2000).map(|s| truth.true_accelerations[s][i][dir]));
                let noise = channel_power(
                    (0..2000).map(|s| d.observed_accelerations[s][i][dir] - truth.true_accelerations[s][i][dir]),
                );
                let snr = signal / noise;
                assert!((snr / 25.0 - 1.0).abs() < 0.1, "snr {snr}");
                assert_eq!(d.acceleration_noise_variance[i][dir], signal / 25.0);
            }
        }
        // unforced channels stay noise-free
        assert_eq!(d.force_noise_variance[1], Vec2::zeros());
        assert!(d.observed_forces.iter().all(|r| r[2] == Vec2::zeros()));
    }

    #[test]
    fn residual_variance_adds_mass_weighted_terms() {
        let truth = sine_truth(500, 2);
        let d = corrupt_and_mask(&truth, Some(25.0), &ObservationMask::all(2), 1).unwrap();
        let r = d.residual_variance(&[2.0, 1.0]);
        assert_eq!(r[0], 4.0 * d.acceleration_noise_variance[0] + d.force_noise_variance[0]);
        assert_eq!(r[1], d.acceleration_noise_variance[1] + d.force_noise_variance[1]);
    }

    #[test]
    fn text_round_trip() {
        let truth = sine_truth(30, 4);
        let d = corrupt_and_mask(&truth, Some(25.0), &sparsity_mask(4, 50.0).unwrap(), 3).unwrap();
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        let back = TrajectoryDataset::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }
}
