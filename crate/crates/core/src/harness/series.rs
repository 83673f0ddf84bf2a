use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gekf::FilterOutput;
use crate::model::Rollout;
use crate::sim::TrajectoryDataset;
use crate::Vec2;

/// Response variable of a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Displacement,
    Velocity,
    Acceleration,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Displacement, Variable::Velocity, Variable::Acceleration];

    pub fn label(self) -> &'static str {
        match self {
            Variable::Displacement => "u",
            Variable::Velocity => "du",
            Variable::Acceleration => "ddu",
        }
    }
}

/// Standard deviations matching a [`PredictionSeries`].
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesStd {
    pub displacements: Vec<Vec<Vec2>>,
    pub velocities: Vec<Vec<Vec2>>,
    pub accelerations: Vec<Vec<Vec2>>,
}

/// Predicted (or true) response of every node, `[step][node]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSeries {
    pub times: Vec<f64>,
    pub displacements: Vec<Vec<Vec2>>,
    pub velocities: Vec<Vec<Vec2>>,
    pub accelerations: Vec<Vec<Vec2>>,
    pub std: Option<SeriesStd>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    step: usize,
    time: f64,
    node: usize,
    ux: f64,
    uy: f64,
    vx: f64,
    vy: f64,
    ax: f64,
    ay: f64,
    ux_std: Option<f64>,
    uy_std: Option<f64>,
    vx_std: Option<f64>,
    vy_std: Option<f64>,
    ax_std: Option<f64>,
    ay_std: Option<f64>,
}

impl PredictionSeries {
    pub fn truth(data: &TrajectoryDataset) -> Self {
        PredictionSeries {
            times: data.times.clone(),
            displacements: data.true_states.iter().map(|s| s.displacements.clone()).collect(),
            velocities: data.true_states.iter().map(|s| s.velocities.clone()).collect(),
            accelerations: data.true_accelerations.clone(),
            std: None,
        }
    }

    pub fn from_rollout(times: &[f64], rollout: &Rollout) -> Self {
        PredictionSeries {
            times: times.to_vec(),
            displacements: rollout.states.iter().map(|s| s.displacements.clone()).collect(),
            velocities: rollout.states.iter().map(|s| s.velocities.clone()).collect(),
            accelerations: rollout.accelerations.clone(),
            std: None,
        }
    }

    pub fn from_filter(times: &[f64], out: &FilterOutput) -> Self {
        PredictionSeries {
            times: times.to_vec(),
            displacements: out.displacements(),
            velocities: out.velocities(),
            accelerations: out.accelerations.clone(),
            std: Some(SeriesStd {
                displacements: out.state_std.iter().map(|s| s.displacements.clone()).collect(),
                velocities: out.state_std.iter().map(|s| s.velocities.clone()).collect(),
                accelerations: out.acceleration_std.clone(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.displacements.first().map_or(0, Vec::len)
    }

    pub fn variable(&self, v: Variable) -> &[Vec<Vec2>] {
        match v {
            Variable::Displacement => &self.displacements,
            Variable::Velocity => &self.velocities,
            Variable::Acceleration => &self.accelerations,
        }
    }

    pub fn variable_std(&self, v: Variable) -> Option<&[Vec<Vec2>]> {
        self.std.as_ref().map(|s| match v {
            Variable::Displacement => &s.displacements[..],
            Variable::Velocity => &s.velocities[..],
            Variable::Acceleration => &s.accelerations[..],
        })
    }

    /// 95% band `mean -/+ 2 std` of one channel, if standard deviations exist.
    pub fn band(&self, v: Variable, step: usize, node: usize) -> Option<(Vec2, Vec2)> {
        let s = self.variable_std(v)?[step][node];
        let m = self.variable(v)[step][node];
        Some((m - 2.0 * s, m + 2.0 * s))
    }

    /// One row per step and node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (k, &time) in self.times.iter().enumerate() {
            for node in 0..self.node_count() {
                let (u, v, a) = (self.displacements[k][node], self.velocities[k][node], self.accelerations[k][node]);
                let sd = |var: Variable, d: usize| self.variable_std(var).map(|s| s[k][node][d]);
                out.serialize(Row {
                    step: k,
                    time,
                    node,
                    ux: u.x,
                    uy: u.y,
                    vx: v.x,
                    vy: v.y,
                    ax: a.x,
                    ay: a.y,
                    ux_std: sd(Variable::Displacement, 0),
                    uy_std: sd(Variable::Displacement, 1),
                    vx_std: sd(Variable::Velocity, 0),
                    vy_std: sd(Variable::Velocity, 1),
                    ax_std: sd(Variable::Acceleration, 0),
                    ay_std: sd(Variable::Acceleration, 1),
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rows: Vec<Row> = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            rows.push(row?);
        }
        let steps = rows.iter().map(|r| r.step + 1).max().unwrap_or(0);
        let nodes = rows.iter().map(|r| r.node + 1).max().unwrap_or(0);
        if rows.len() != steps * nodes {
            return Err(Error::Parse(format!("expected {} rows, found {}", steps * nodes, rows.len())));
        }
        let has_std = rows.first().is_some_and(|r| r.ux_std.is_some());
        let grid = || vec![vec![Vec2::zeros(); nodes]; steps];
        let mut s = PredictionSeries {
            times: vec![0.0; steps],
            displacements: grid(),
            velocities: grid(),
            accelerations: grid(),
            std: has_std.then(|| SeriesStd {
                displacements: grid(),
                velocities: grid(),
                accelerations: grid(),
            }),
        };
        for r in rows {
            let (k, i) = (r.step, r.node);
            s.times[k] = r.time;
            s.displacements[k][i] = Vec2::new(r.ux, r.uy);
            s.velocities[k][i] = Vec2::new(r.vx, r.vy);
            s.accelerations[k][i] = Vec2::new(r.ax, r.ay);
            if let Some(sd) = &mut s.std {
                let get = |v: Option<f64>| v.ok_or_else(|| Error::Parse(format!("missing std at step {k}, node {i}")));
                sd.displacements[k][i] = Vec2::new(get(r.ux_std)?, get(r.uy_std)?);
                sd.velocities[k][i] = Vec2::new(get(r.vx_std)?, get(r.vy_std)?);
                sd.accelerations[k][i] = Vec2::new(get(r.ax_std)?, get(r.ay_std)?);
            }
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
