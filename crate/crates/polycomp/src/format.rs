//! Binary dataset and checkpoint files.
//!
//! Both formats are little-endian: a 4-byte magic, a `u8` version, then
//! length-prefixed sections. Floats are stored as `f64` so a round trip is
//! bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use polycomp_core::compressor::{Autoencoder, Standardizer};
use polycomp_core::dataset::{PolicyDataset, ProbeDescriptor, ProbeKind};
use polycomp_core::envs::EnvKind;
use polycomp_core::policy::MlpArchitecture;
use polycomp_core::Matrix;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"PCDS";
pub const DATASET_VERSION: u8 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCAE";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Upper bound on any single length field, to reject corrupt headers before
/// allocating.
const MAX_LEN: u64 = 1 << 34;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        self.0.reserve(v.len() * 8);
        for &x in v {
            self.f64(x);
        }
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated file at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize, String> {
        let v = self.u64()?;
        if v > MAX_LEN {
            return Err(format!("implausible length {v} at byte {}", self.pos - 8));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, String> {
        let n = self.usize()?;
        let bytes = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn usizes(&mut self) -> Result<Vec<usize>, String> {
        let n = self.usize()?;
        (0..n).map(|_| self.usize()).collect()
    }
    fn header(&mut self, magic: &[u8; 4], version: u8) -> Result<(), String> {
        if self.take(4)? != magic {
            return Err(format!("not a {} file", String::from_utf8_lossy(magic)));
        }
        let v = self.u8()?;
        if v != version {
            return Err(format!("unsupported version {v} (expected {version})"));
        }
        Ok(())
    }
    fn finish(&self) -> Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn env_code(e: EnvKind) -> u8 {
    match e {
        EnvKind::MountainCar => 0,
        EnvKind::Reacher => 1,
    }
}

fn env_from(c: u8) -> Result<EnvKind, String> {
    match c {
        0 => Ok(EnvKind::MountainCar),
        1 => Ok(EnvKind::Reacher),
        _ => Err(format!("unknown environment code {c}")),
    }
}

fn write_arch(w: &mut Writer, env: EnvKind, arch: &MlpArchitecture) {
    w.u8(env_code(env));
    w.usizes(arch.hidden());
    w.usize(arch.output_dim());
    let (lo, hi) = arch.state_bounds();
    w.f64s(lo);
    w.f64s(hi);
}

fn read_arch(r: &mut Reader) -> Result<(EnvKind, MlpArchitecture), String> {
    let env = env_from(r.u8()?)?;
    let hidden = r.usizes()?;
    let out = r.usize()?;
    let lo = r.f64s()?;
    let hi = r.f64s()?;
    let arch = MlpArchitecture::new(hidden, out, lo, hi).map_err(|e| e.to_string())?;
    Ok((env, arch))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn encode_dataset(ds: &PolicyDataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u8(DATASET_VERSION);
    write_arch(&mut w, ds.probe.env, &ds.arch);
    w.usize(ds.pool_size);
    w.u64(ds.seed);
    w.usize(ds.novelty_k);
    w.f64(ds.sample_scale);
    w.u8(match ds.probe.kind {
        ProbeKind::Grid => 0,
        ProbeKind::Uniform => 1,
    });
    w.u64(ds.probe.seed);
    w.usize(ds.probe.size);
    let (n, p) = ds.params.shape();
    w.usize(n);
    w.usize(p);
    for &x in ds.params.as_slice() {
        w.f64(x);
    }
    w.f64s(&ds.scores);
    w.usizes(&ds.source_indices);
    w.0
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PolicyDataset, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let (env, arch) = read_arch(&mut r)?;
    let pool_size = r.usize()?;
    let seed = r.u64()?;
    let novelty_k = r.usize()?;
    let sample_scale = r.f64()?;
    let kind = match r.u8()? {
        0 => ProbeKind::Grid,
        1 => ProbeKind::Uniform,
        c => return Err(format!("unknown probe kind {c}")),
    };
    let probe = ProbeDescriptor {
        env,
        kind,
        seed: r.u64()?,
        size: r.usize()?,
    };
    let n = r.usize()?;
    let p = r.usize()?;
    if p != arch.param_count() {
        return Err(format!("parameter count {p} does not match architecture ({})", arch.param_count()));
    }
    let bytes = r.take(n.checked_mul(p).and_then(|v| v.checked_mul(8)).ok_or("length overflow")?)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = Matrix::from_vec(n, p, data).map_err(|e| e.to_string())?;
    let scores = r.f64s()?;
    let source_indices = r.usizes()?;
    r.finish()?;
    if scores.len() != n || source_indices.len() != n {
        return Err("score or index count does not match policy count".into());
    }
    Ok(PolicyDataset {
        arch,
        params,
        scores,
        source_indices,
        pool_size,
        seed,
        probe,
        novelty_k,
        sample_scale,
    })
}

pub fn encode_checkpoint(env: EnvKind, ae: &Autoencoder) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u8(CHECKPOINT_VERSION);
    write_arch(&mut w, env, ae.policy_arch());
    w.usize(ae.latent_dim());
    w.usizes(ae.hidden());
    w.f64s(&ae.standardizer().mean);
    w.f64s(&ae.standardizer().std);
    w.f64s(ae.weights());
    w.f64s(ae.latent_center());
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EnvKind, Autoencoder), String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let (env, arch) = read_arch(&mut r)?;
    let latent_dim = r.usize()?;
    let hidden = r.usizes()?;
    let mean = r.f64s()?;
    let std = r.f64s()?;
    let weights = r.f64s()?;
    let center = r.f64s()?;
    r.finish()?;
    let ae = Autoencoder::from_parts(arch, latent_dim, hidden, Standardizer { mean, std }, weights, center)
        .map_err(|e| e.to_string())?;
    Ok((env, ae))
}

pub fn save_dataset(path: &Path, ds: &PolicyDataset) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<PolicyDataset> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_dataset(&bytes).map_err(|m| CliError::format(path, m))
}

pub fn save_checkpoint(path: &Path, env: EnvKind, ae: &Autoencoder) -> Result<()> {
    write_atomic(path, &encode_checkpoint(env, ae))
}

pub fn load_checkpoint(path: &Path) -> Result<(EnvKind, Autoencoder)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|m| CliError::format(path, m))
}

/// Human-readable copy of a dataset header.
#[derive(Debug, Serialize)]
pub struct DatasetSidecar {
    pub format: &'static str,
    pub version: u8,
    pub env: EnvKind,
    pub hidden: Vec<usize>,
    pub n: usize,
    pub p: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub novelty_k: usize,
    pub sample_scale: f64,
    pub probe: ProbeDescriptor,
    pub novelty_min: f64,
    pub novelty_mean: f64,
    pub novelty_max: f64,
}

impl DatasetSidecar {
    pub fn new(ds: &PolicyDataset) -> Self {
        let fold = |f: fn(f64, f64) -> f64, init| ds.scores.iter().copied().fold(init, f);
        Self {
            format: "PCDS",
            version: DATASET_VERSION,
            env: ds.probe.env,
            hidden: ds.arch.hidden().to_vec(),
            n: ds.len(),
            p: ds.arch.param_count(),
            pool_size: ds.pool_size,
            seed: ds.seed,
            novelty_k: ds.novelty_k,
            sample_scale: ds.sample_scale,
            probe: ds.probe,
            novelty_min: fold(f64::min, f64::INFINITY),
            novelty_mean: polycomp_core::stats::mean(&ds.scores),
            novelty_max: fold(f64::max, f64::NEG_INFINITY),
        }
    }
}

/// Human-readable copy of a checkpoint header.
#[derive(Debug, Serialize)]
pub struct CheckpointSidecar {
    pub format: &'static str,
    pub version: u8,
    pub env: EnvKind,
    pub policy_hidden: Vec<usize>,
    pub policy_params: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub weights: usize,
    pub latent_center: Vec<f64>,
}

impl CheckpointSidecar {
    pub fn new(env: EnvKind, ae: &Autoencoder) -> Self {
        Self {
            format: "PCAE",
            version: CHECKPOINT_VERSION,
            env,
            policy_hidden: ae.policy_arch().hidden().to_vec(),
            policy_params: ae.policy_arch().param_count(),
            latent_dim: ae.latent_dim(),
            hidden: ae.hidden().to_vec(),
            weights: ae.weights().len(),
            latent_center: ae.latent_center().to_vec(),
        }
    }
}
