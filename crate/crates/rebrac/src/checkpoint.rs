//! Agent checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "RBAC" | u16 version | u32 header_len | header (JSON, header_len bytes)
//! f32 parameters of actor, actor_target, critic_a, critic_b,
//!     critic_a_target, critic_b_target (tensor order of each network)
//! f32 Adam first then second moments for actor, critic_a, critic_b
//!     (omitted for an optimiser that has not stepped yet)
//! u32 crc32 of everything before it
//! ```

use std::fs;
use std::path::Path;

use rebrac_core::agent::RngState;
use rebrac_core::envs::EnvKind;
use rebrac_core::nn::Parameters;
use rebrac_core::{Adam, AgentConfig, AgentState, MlpParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RBAC";
pub const VERSION: u16 = 1;

/// Everything needed to resume training or to evaluate a trained actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: AgentConfig,
    pub env: EnvKind,
    /// Dataset state mean and std used to normalise observations.
    pub state_stats: Option<(Vec<f32>, Vec<f32>)>,
    pub agent: AgentState<f32>,
}

#[derive(Serialize, Deserialize)]
struct OptimHeader {
    lr: f64,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: AgentConfig,
    env: EnvKind,
    state_mean: Option<Vec<f32>>,
    state_std: Option<Vec<f32>>,
    critic_updates: u64,
    actor_updates: u64,
    lambda_fallbacks: u64,
    optimizers: [OptimHeader; 3],
    rng_seed: String,
    rng_stream: u64,
    /// Decimal string; JSON numbers cannot hold every u128.
    rng_word_pos: String,
}

fn optimizers(agent: &AgentState<f32>) -> [(&Adam<f32>, &MlpParams<f32>); 3] {
    [
        (&agent.actor_opt, &agent.actor),
        (&agent.critic_a_opt, &agent.critic_a),
        (&agent.critic_b_opt, &agent.critic_b),
    ]
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let a = &ckpt.agent;
    let rng = RngState::capture(&a.rng);
    let header = Header {
        config: ckpt.config.clone(),
        env: ckpt.env,
        state_mean: ckpt.state_stats.as_ref().map(|s| s.0.clone()),
        state_std: ckpt.state_stats.as_ref().map(|s| s.1.clone()),
        critic_updates: a.critic_updates,
        actor_updates: a.actor_updates,
        lambda_fallbacks: a.lambda_fallbacks,
        optimizers: optimizers(a).map(|(o, _)| OptimHeader {
            lr: o.lr,
            steps: o.step_count(),
        }),
        rng_seed: hex::encode(rng.seed),
        rng_stream: rng.stream,
        rng_word_pos: rng.word_pos.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for net in a.networks() {
        for t in net.tensors() {
            push_f32s(&mut out, t.data());
        }
    }
    for (opt, _) in optimizers(a) {
        for m in opt.first_moments().iter().chain(opt.second_moments()) {
            push_f32s(&mut out, m);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.buf.len() {
            return Err(Error::Truncated {
                needed: end,
                have: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn fill(&mut self, dst: &mut [f32]) -> Result<()> {
        let raw = self.take(dst.len() * 4)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let mut c = Cursor { buf: bytes, pos: 4 };
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version.into()));
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated {
            needed: 10,
            have: bytes.len(),
        });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let body = &bytes[..bytes.len() - 4];
    let mut c = Cursor { buf: body, pos: c.pos };
    let json_len = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(c.take(json_len)?)?;

    let mut agent = AgentState::<f32>::new(&header.config, 0)?;
    for net in agent.networks_mut() {
        for t in net.tensors_mut() {
            c.fill(t.data_mut())?;
        }
    }
    let mut rebuilt = Vec::with_capacity(3);
    for ((_, params), h) in optimizers(&agent).into_iter().zip(&header.optimizers) {
        let (mut m, mut v) = (Vec::new(), Vec::new());
        if h.steps > 0 {
            for moments in [&mut m, &mut v] {
                for t in params.tensors() {
                    let mut buf = vec![0.0f32; t.len()];
                    c.fill(&mut buf)?;
                    moments.push(buf);
                }
            }
        }
        rebuilt.push(Adam::from_parts(h.lr, h.steps, m, v));
    }
    if c.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - c.pos)));
    }
    let [actor_opt, critic_a_opt, critic_b_opt]: [Adam<f32>; 3] = rebuilt.try_into().expect("three optimisers");
    agent.actor_opt = actor_opt;
    agent.critic_a_opt = critic_a_opt;
    agent.critic_b_opt = critic_b_opt;
    agent.critic_updates = header.critic_updates;
    agent.actor_updates = header.actor_updates;
    agent.lambda_fallbacks = header.lambda_fallbacks;

    let seed: [u8; 32] = hex::decode(&header.rng_seed)
        .ok()
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Format("rng seed must be 32 hex bytes".into()))?;
    let word_pos = header
        .rng_word_pos
        .parse()
        .map_err(|_| Error::Format("rng word position is not an integer".into()))?;
    agent.rng = RngState {
        seed,
        stream: header.rng_stream,
        word_pos,
    }
    .restore();

    let state_stats = match (header.state_mean, header.state_std) {
        (Some(m), Some(s)) => Some((m, s)),
        (None, None) => None,
        _ => return Err(Error::Format("state mean and std must both be present".into())),
    };
    Ok(Checkpoint {
        config: header.config,
        env: header.env,
        state_stats,
        agent,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
