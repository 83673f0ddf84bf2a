//! Binary checkpoint, all numbers little-endian:
//!
//! ```text
//! magic        8 bytes  "PGGNODE\0"
//! version      u32      1
//! slope        f64      LeakyReLU negative slope
//! 3 networks   node encoder, edge encoder, message net, each:
//!              u32 size count, u32 sizes..., f64 parameters
//!              (per layer: row-major weights, then biases)
//! scales       7 x f64  length, force, extension, extension rate,
//!                       stiffness, damping, mass
//! acc var      u32 count, count x (f64, f64)
//! force var    u32 count, count x (f64, f64)
//! nominal      u64 byte length, UTF-8 graph TOML
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::StructuralGraph;
use crate::model::features::FeatureScales;
use crate::model::piggo::{Closure, PiggoModel};
use crate::nn::DenseNetwork;
use crate::Vec2;

const MAGIC: &[u8; 8] = b"PGGNODE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn put_network<W: Write>(w: &mut W, net: &DenseNetwork) -> Result<()> {
    let sizes = net.sizes();
    put_u32(w, sizes.len() as u32)?;
    for s in sizes {
        put_u32(w, s as u32)?;
    }
    for p in net.flat_params() {
        put_f64(w, p)?;
    }
    Ok(())
}

fn get_network<R: Read>(r: &mut R, slope: f64) -> Result<DenseNetwork> {
    let count = get_u32(r)? as usize;
    if !(2..=64).contains(&count) {
        return Err(Error::Parse(format!("implausible layer count {count}")));
    }
    let sizes = (0..count)
        .map(|_| get_u32(r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    if sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
        return Err(Error::Parse(format!("implausible layer sizes {sizes:?}")));
    }
    let mut net = DenseNetwork::zeros(&sizes);
    net.slope = slope;
    let params = (0..net.parameter_count())
        .map(|_| get_f64(r))
        .collect::<Result<Vec<_>>>()?;
    net.set_flat_params(&params)?;
    if !net.is_finite() {
        return Err(Error::Parse("non-finite network parameter".into()));
    }
    Ok(net)
}

fn put_pairs<W: Write>(w: &mut W, v: &[Vec2]) -> Result<()> {
    put_u32(w, v.len() as u32)?;
    for p in v {
        put_f64(w, p.x)?;
        put_f64(w, p.y)?;
    }
    Ok(())
}

fn get_pairs<R: Read>(r: &mut R) -> Result<Vec<Vec2>> {
    let n = get_u32(r)? as usize;
    (0..n).map(|_| Ok(Vec2::new(get_f64(r)?, get_f64(r)?))).collect()
}

impl PiggoModel {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        if !matches!(self.closure, Closure::Learned) {
            return Err(Error::Invalid("only learned models can be checkpointed".into()));
        }
        w.write_all(MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        put_f64(&mut w, self.message_net.slope)?;
        for net in [&self.node_encoder, &self.edge_encoder, &self.message_net] {
            put_network(&mut w, net)?;
        }
        let s = &self.scales;
        for v in [s.length, s.force, s.extension, s.extension_rate, s.stiffness, s.damping, s.mass] {
            put_f64(&mut w, v)?;
        }
        put_pairs(&mut w, &self.acceleration_noise_variance)?;
        put_pairs(&mut w, &self.force_noise_variance)?;
        let graph = self.nominal_graph.to_toml()?;
        w.write_all(&(graph.len() as u64).to_le_bytes())?;
        w.write_all(graph.as_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a model checkpoint".into()));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let slope = get_f64(&mut r)?;
        let node_encoder = get_network(&mut r, slope)?;
        let edge_encoder = get_network(&mut r, slope)?;
        let message_net = get_network(&mut r, slope)?;
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = get_f64(&mut r)?;
        }
        let scales = FeatureScales {
            length: v[0],
            force: v[1],
            extension: v[2],
            extension_rate: v[3],
            stiffness: v[4],
            damping: v[5],
            mass: v[6],
        };
        scales.validate()?;
        let acceleration_noise_variance = get_pairs(&mut r)?;
        let force_noise_variance = get_pairs(&mut r)?;
        let len = get_u64(&mut r)? as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
        let nominal_graph = StructuralGraph::from_toml(&text)?;
        let hn = node_encoder.output_size();
        let he = edge_encoder.output_size();
        if message_net.input_size() != 2 * hn + he || !(1..=2).contains(&message_net.output_size()) {
            return Err(Error::Parse("network sizes do not chain".into()));
        }
        Ok(PiggoModel {
            node_encoder,
            edge_encoder,
            message_net,
            nominal_graph,
            scales,
            acceleration_noise_variance,
            force_noise_variance,
            closure: Closure::Learned,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        Ok(std::fs::write(path, buf)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
