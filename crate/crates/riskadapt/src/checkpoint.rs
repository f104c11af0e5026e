//! Versioned binary agent checkpoints.
//!
//! Layout (all little-endian): magic `RADPCKPT`, format version u32,
//! iteration u64, alpha f64, then the actor (layer_dims as u32 count +
//! values, per-layer row-major f64 weights then biases, then log_std), the
//! critic in the same layer encoding, and both optimizer states
//! (hyperparameters, step counter, then first and second moments matching
//! the parameter groups). Doubles are written bit-exact, so a save/load
//! round trip reproduces evaluation results bitwise.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::{AdamState, GaussianPolicy, Mlp};

const MAGIC: &[u8; 8] = b"RADPCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub alpha: f64,
    pub actor: GaussianPolicy,
    pub critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        write_u64(&mut w, self.iteration)?;
        write_f64(&mut w, self.alpha)?;

        write_mlp(&mut w, &self.actor.mean_net)?;
        write_f64_vec(&mut w, &self.actor.log_std)?;
        write_mlp(&mut w, &self.critic)?;

        write_adam(&mut w, &self.actor_opt)?;
        write_adam(&mut w, &self.critic_opt)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let iteration = read_u64(&mut r)?;
        let alpha = read_f64(&mut r)?;

        let mean_net = read_mlp(&mut r)?;
        let log_std = read_f64_vec(&mut r)?;
        if log_std.len() != mean_net.output_dim() {
            return Err(CheckpointError::Corrupt(format!(
                "log_std length {} does not match actor output {}",
                log_std.len(),
                mean_net.output_dim()
            )));
        }
        let critic = read_mlp(&mut r)?;
        let actor = GaussianPolicy { mean_net, log_std };

        let actor_opt = read_adam(&mut r)?;
        let critic_opt = read_adam(&mut r)?;

        let expect_groups = |name: &str, state: &AdamState, lens: &[usize]| {
            let (m, _) = state.moments();
            if m.len() != lens.len() || m.iter().zip(lens).any(|(g, &n)| g.len() != n) {
                return Err(CheckpointError::Corrupt(format!(
                    "{name} optimizer state does not match parameter shapes"
                )));
            }
            Ok(())
        };
        expect_groups("actor", &actor_opt, &actor.param_group_lens())?;
        expect_groups("critic", &critic_opt, &critic.param_group_lens())?;

        Ok(Self {
            iteration,
            alpha,
            actor,
            critic,
            actor_opt,
            critic_opt,
        })
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64_vec<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    write_u32(w, v.len() as u32)?;
    for &x in v {
        write_f64(w, x)?;
    }
    Ok(())
}

fn write_mlp<W: Write>(w: &mut W, net: &Mlp) -> io::Result<()> {
    write_u32(w, net.layer_dims().len() as u32)?;
    for &d in net.layer_dims() {
        write_u32(w, d as u32)?;
    }
    for l in 0..net.n_layers() {
        for &x in &net.weights()[l] {
            write_f64(w, x)?;
        }
        for &x in &net.biases()[l] {
            write_f64(w, x)?;
        }
    }
    Ok(())
}

fn write_adam<W: Write>(w: &mut W, state: &AdamState) -> io::Result<()> {
    write_f64(w, state.lr)?;
    write_f64(w, state.beta1)?;
    write_f64(w, state.beta2)?;
    write_f64(w, state.eps)?;
    write_u64(w, state.step)?;
    let (m, v) = state.moments();
    write_u32(w, m.len() as u32)?;
    for group in m {
        write_f64_vec(w, group)?;
    }
    for group in v {
        write_f64_vec(w, group)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>, CheckpointError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 28 {
        return Err(CheckpointError::Corrupt(format!("vector length {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp, CheckpointError> {
    let n_dims = read_u32(r)? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(CheckpointError::Corrupt(format!("{n_dims} layer dims")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        let d = read_u32(r)? as usize;
        if d == 0 || d > 1 << 20 {
            return Err(CheckpointError::Corrupt(format!("layer dim {d}")));
        }
        dims.push(d);
    }
    let mut weights = Vec::with_capacity(n_dims - 1);
    let mut biases = Vec::with_capacity(n_dims - 1);
    for l in 0..n_dims - 1 {
        let mut w = Vec::with_capacity(dims[l] * dims[l + 1]);
        for _ in 0..dims[l] * dims[l + 1] {
            w.push(read_f64(r)?);
        }
        let mut b = Vec::with_capacity(dims[l + 1]);
        for _ in 0..dims[l + 1] {
            b.push(read_f64(r)?);
        }
        weights.push(w);
        biases.push(b);
    }
    Ok(Mlp::from_parameters(dims, weights, biases))
}

fn read_adam<R: Read>(r: &mut R) -> Result<AdamState, CheckpointError> {
    let lr = read_f64(r)?;
    let beta1 = read_f64(r)?;
    let beta2 = read_f64(r)?;
    let eps = read_f64(r)?;
    let step = read_u64(r)?;
    let n_groups = read_u32(r)? as usize;
    if n_groups > 1 << 16 {
        return Err(CheckpointError::Corrupt(format!("{n_groups} groups")));
    }
    let mut m = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        m.push(read_f64_vec(r)?);
    }
    let mut v = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        v.push(read_f64_vec(r)?);
    }
    Ok(AdamState::from_parts(lr, beta1, beta2, eps, step, m, v))
}
