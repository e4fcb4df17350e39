//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//! magic `ENDOPPO\0`, version `u32`, config hash (32 bytes), seed `u64`,
//! obs/act dims and hidden widths (`u32`), update, timestep and Adam step
//! (`u64`), parameter count `u64` followed by weights, Adam first and second
//! moments, normalizer count/mean/var, then the learning curve.
//!
//! Random streams are derived from `(seed, update, worker)`, so the seed and
//! update counter are the complete RNG state.

use std::path::Path;

use super::{Adam, Agent, CurvePoint, Normalizer, PolicyParams, PpoError, TrainState};

pub const MAGIC: &[u8; 8] = b"ENDOPPO\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PpoError> {
        if self.pos + n > self.data.len() {
            return Err(PpoError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, PpoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, PpoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn count(&mut self, limit: usize) -> Result<usize, PpoError> {
        let n = self.u64()? as usize;
        if n > limit {
            return Err(PpoError::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, PpoError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| PpoError::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let st = &self.state;
        let p = &st.agent.params;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.0.extend_from_slice(&self.config_hash);
        w.u64(self.seed);
        w.u32(p.obs_dim as u32);
        w.u32(p.act_dim as u32);
        w.u32(p.hidden.len() as u32);
        for &h in &p.hidden {
            w.u32(h as u32);
        }
        w.u64(st.update as u64);
        w.u64(st.timestep as u64);
        w.u64(st.adam.t);
        w.u64(p.data.len() as u64);
        w.f64s(&p.data);
        w.f64s(&st.adam.m);
        w.f64s(&st.adam.v);
        w.f64s(&[st.agent.normalizer.count]);
        w.f64s(&st.agent.normalizer.mean);
        w.f64s(&st.agent.normalizer.var);
        w.u64(st.curve.len() as u64);
        for c in &st.curve {
            w.u64(c.timestep as u64);
            w.u64(c.episodes as u64);
            w.f64s(&[c.mean_reward, c.sr, c.policy_loss, c.value_loss, c.entropy, c.clip_fraction, c.approx_kl]);
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, PpoError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(PpoError::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(PpoError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let seed = r.u64()?;
        let obs_dim = r.u32()? as usize;
        let act_dim = r.u32()? as usize;
        let nh = r.u32()? as usize;
        if nh > 64 {
            return Err(PpoError::Checkpoint(format!("implausible layer count {nh}")));
        }
        let hidden = (0..nh).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>, _>>()?;
        let update = r.u64()? as usize;
        let timestep = r.u64()? as usize;
        let t = r.u64()?;
        let n = r.count(data.len() / 8)?;
        let params = PolicyParams::from_data(obs_dim, act_dim, &hidden, r.f64s(n)?)?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        let count = r.f64s(1)?[0];
        let mean = r.f64s(obs_dim)?;
        let var = r.f64s(obs_dim)?;
        let nc = r.count(data.len() / 8)?;
        let mut curve = Vec::with_capacity(nc);
        for _ in 0..nc {
            let timestep = r.u64()? as usize;
            let episodes = r.u64()? as usize;
            let f = r.f64s(7)?;
            curve.push(CurvePoint {
                timestep,
                episodes,
                mean_reward: f[0],
                sr: f[1],
                policy_loss: f[2],
                value_loss: f[3],
                entropy: f[4],
                clip_fraction: f[5],
                approx_kl: f[6],
            });
        }
        if r.pos != data.len() {
            return Err(PpoError::Checkpoint(format!("{} trailing bytes", data.len() - r.pos)));
        }
        Ok(Self {
            config_hash,
            seed,
            state: TrainState {
                agent: Agent {
                    params,
                    normalizer: Normalizer { count, mean, var },
                },
                adam: Adam { m, v, t },
                update,
                timestep,
                curve,
            },
        })
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let io = |source| PpoError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let data = std::fs::read(path).map_err(|source| PpoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&data)
    }

    /// Refuses to resume under a different configuration.
    pub fn check_hash(&self, current: &[u8; 32]) -> Result<(), PpoError> {
        if &self.config_hash != current {
            return Err(PpoError::ConfigMismatch {
                checkpoint: hex(&self.config_hash),
                current: hex(current),
            });
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
