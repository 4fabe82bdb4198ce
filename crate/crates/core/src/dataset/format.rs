//! Binary demonstration and tuple files.
//!
//! Both are little-endian, column blocks of 64-bit values, and end with the
//! SHA-256 of every preceding byte. The layouts are described in
//! `docs/FORMATS.md`.

use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::relabel::{GoalRule, RelabeledTuple, GOAL_DIM, POSE_DIM};
use super::DatasetError;
use crate::dynamics::{Action, SystemState};
use crate::planners::PlannerKind;
use crate::rollout::Demonstration;

pub const DEMO_MAGIC: [u8; 8] = *b"CDSDEMO\0";
pub const TUPLE_MAGIC: [u8; 8] = *b"CDSTUPL\0";
pub const SCHEMA_VERSION: u32 = 1;
const TRAILER: usize = 32;

pub type Digest32 = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest32 {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}

/// Hash of the JSON form of a config value.
pub fn config_hash<T: serde::Serialize>(value: &T) -> Digest32 {
    sha256(&serde_json::to_vec(value).expect("config types serialize"))
}

/// Content hash of a file, hex encoded.
pub fn file_hash(path: &Path) -> Result<String, DatasetError> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoHeader {
    pub version: u32,
    pub planner: PlannerKind,
    /// First seed of the generating run.
    pub seed: u64,
    pub task_hash: Digest32,
    pub params_hash: Digest32,
    pub n_rbt: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoFile {
    pub header: DemoHeader,
    pub demos: Vec<Demonstration>,
}

impl DemoFile {
    pub fn check_hashes(
        &self,
        task_hash: &Digest32,
        params_hash: &Digest32,
    ) -> Result<(), DatasetError> {
        if &self.header.task_hash != task_hash {
            return Err(DatasetError::TaskHashMismatch {
                found: hex::encode(self.header.task_hash),
                expected: hex::encode(task_hash),
            });
        }
        if &self.header.params_hash != params_hash {
            return Err(DatasetError::ParamsHashMismatch {
                found: hex::encode(self.header.params_hash),
                expected: hex::encode(params_hash),
            });
        }
        Ok(())
    }
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn seal(mut self) -> Vec<u8> {
        let h = sha256(&self.0);
        self.0.extend_from_slice(&h);
        self.0
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DatasetError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len() - self.pos,
            }),
        }
    }
    fn u8(&mut self) -> Result<u8, DatasetError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize, DatasetError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| DatasetError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
            available: self.buf.len() - self.pos,
        })
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn digest(&mut self) -> Result<Digest32, DatasetError> {
        Ok(self.take(32)?.try_into().expect("32 bytes"))
    }
    /// `n` values of 8 bytes each, checked against the remaining length first.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DatasetError> {
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn u64s(&mut self, n: usize) -> Result<Vec<u64>, DatasetError> {
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn magic(&mut self, expected: &[u8; 8]) -> Result<(), DatasetError> {
        let m = self.take(8).map_err(|_| DatasetError::BadMagic)?;
        if m != expected {
            return Err(DatasetError::BadMagic);
        }
        Ok(())
    }
    fn version(&mut self) -> Result<u32, DatasetError> {
        let v = self.u32()?;
        if v != SCHEMA_VERSION {
            return Err(DatasetError::VersionMismatch {
                found: v,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(v)
    }
    /// Checks that exactly the trailer remains and that it matches.
    fn finish(self) -> Result<(), DatasetError> {
        let rest = self.buf.len() - self.pos;
        if rest < TRAILER {
            return Err(DatasetError::Truncated {
                offset: self.pos,
                needed: TRAILER,
                available: rest,
            });
        }
        if rest > TRAILER {
            return Err(DatasetError::Corrupt(format!(
                "{} unexpected bytes before the checksum",
                rest - TRAILER
            )));
        }
        if sha256(&self.buf[..self.pos]) != self.buf[self.pos..] {
            return Err(DatasetError::Corrupt("checksum mismatch".into()));
        }
        Ok(())
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path)
        .map_err(|e| DatasetError::Io(e.error.to_string()))?;
    Ok(())
}

pub fn encode_demos(header: &DemoHeader, demos: &[Demonstration]) -> Result<Vec<u8>, DatasetError> {
    let n_rbt = header.n_rbt;
    for (i, d) in demos.iter().enumerate() {
        d.validate()
            .map_err(|e| DatasetError::Invalid(format!("demo {i}: {e}")))?;
        if d.states.iter().any(|s| s.n_rbt() != n_rbt) || d.actions.iter().any(|a| a.len() != n_rbt)
        {
            return Err(DatasetError::Invalid(format!(
                "demo {i}: joint count differs from header ({n_rbt})"
            )));
        }
    }
    let mut o = Out(Vec::new());
    o.bytes(&DEMO_MAGIC);
    o.u32(header.version);
    o.u8(header.planner.id());
    o.bytes(&[0; 3]);
    o.u64(header.seed);
    o.bytes(&header.task_hash);
    o.bytes(&header.params_hash);
    o.u32(n_rbt as u32);
    o.u32(0);
    o.u64(demos.len() as u64);
    for d in demos {
        o.u64(d.states.len() as u64);
        o.u64(d.regrasp_indices.len() as u64);
        o.u64(d.plan_id);
        o.u64(d.chunk_index as u64);
        o.f64(d.dt);
        for g in d.goal {
            o.f64(g);
        }
        for &r in &d.regrasp_indices {
            o.u64(r as u64);
        }
        for k in 0..3 {
            for s in &d.states {
                o.f64(s.q_obj[k]);
            }
        }
        for j in 0..n_rbt {
            for s in &d.states {
                o.f64(s.q_rbt[j]);
            }
        }
        for j in 0..n_rbt {
            for a in &d.actions {
                o.f64(a.0[j]);
            }
        }
    }
    Ok(o.seal())
}

pub fn decode_demos(bytes: &[u8]) -> Result<DemoFile, DatasetError> {
    let mut r = In { buf: bytes, pos: 0 };
    r.magic(&DEMO_MAGIC)?;
    let version = r.version()?;
    let pid = r.u8()?;
    let planner = PlannerKind::from_id(pid)
        .ok_or_else(|| DatasetError::Corrupt(format!("unknown planner id {pid}")))?;
    r.take(3)?;
    let seed = r.u64()?;
    let task_hash = r.digest()?;
    let params_hash = r.digest()?;
    let n_rbt = r.u32()? as usize;
    r.take(4)?;
    let n_demos = r.usize()?;
    let mut demos = Vec::new();
    for _ in 0..n_demos {
        let t = r.usize()?;
        let n_reg = r.usize()?;
        let plan_id = r.u64()?;
        let chunk_index = r.usize()?;
        let dt = r.f64()?;
        let goal = [r.f64()?, r.f64()?, r.f64()?];
        let regrasp_indices = r.u64s(n_reg)?.into_iter().map(|v| v as usize).collect();
        let obj = r.f64s(t.saturating_mul(3))?;
        let rbt = r.f64s(t.saturating_mul(n_rbt))?;
        if t == 0 {
            return Err(DatasetError::Corrupt("demonstration without states".into()));
        }
        let act = r.f64s((t - 1).saturating_mul(n_rbt))?;
        let states = (0..t)
            .map(|i| SystemState {
                q_obj: [obj[i], obj[t + i], obj[2 * t + i]],
                q_rbt: (0..n_rbt).map(|j| rbt[j * t + i]).collect(),
            })
            .collect();
        let actions = (0..t - 1)
            .map(|i| Action((0..n_rbt).map(|j| act[j * (t - 1) + i]).collect()))
            .collect();
        demos.push(Demonstration {
            states,
            actions,
            dt,
            regrasp_indices,
            plan_id,
            chunk_index,
            goal,
        });
    }
    r.finish()?;
    for (i, d) in demos.iter().enumerate() {
        d.validate()
            .map_err(|e| DatasetError::Corrupt(format!("demo {i}: {e}")))?;
    }
    Ok(DemoFile {
        header: DemoHeader {
            version,
            planner,
            seed,
            task_hash,
            params_hash,
            n_rbt,
        },
        demos,
    })
}

pub fn write_demos(
    path: &Path,
    header: &DemoHeader,
    demos: &[Demonstration],
) -> Result<(), DatasetError> {
    write_atomic(path, &encode_demos(header, demos)?)
}

pub fn read_demos(path: &Path) -> Result<DemoFile, DatasetError> {
    decode_demos(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleHeader {
    pub version: u32,
    pub rule: GoalRule,
    pub h_o: usize,
    pub h_a: usize,
    pub n_rbt: usize,
    pub task_hash: Digest32,
}

impl TupleHeader {
    /// Length of one featurized state.
    pub fn state_dim(&self) -> usize {
        POSE_DIM + self.n_rbt
    }
    pub fn obs_len(&self) -> usize {
        (self.h_o + 1) * self.state_dim()
    }
    pub fn act_len(&self) -> usize {
        self.h_a * self.n_rbt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TupleFile {
    pub header: TupleHeader,
    pub tuples: Vec<RelabeledTuple>,
}

pub fn encode_tuples(
    header: &TupleHeader,
    tuples: &[RelabeledTuple],
) -> Result<Vec<u8>, DatasetError> {
    let (ol, al) = (header.obs_len(), header.act_len());
    if let Some(i) = tuples
        .iter()
        .position(|t| t.obs.len() != ol || t.actions.len() != al)
    {
        return Err(DatasetError::Invalid(format!(
            "tuple {i} does not match the header shape"
        )));
    }
    let (rule_id, k) = match header.rule {
        GoalRule::All => (0u8, 0u32),
        GoalRule::Uniform(k) => (1u8, k as u32),
    };
    let mut o = Out(Vec::new());
    o.bytes(&TUPLE_MAGIC);
    o.u32(header.version);
    o.u8(rule_id);
    o.bytes(&[0; 3]);
    o.u32(k);
    o.u32(header.h_o as u32);
    o.u32(header.h_a as u32);
    o.u32(header.state_dim() as u32);
    o.u32(header.n_rbt as u32);
    o.u32(GOAL_DIM as u32);
    o.bytes(&header.task_hash);
    o.u64(tuples.len() as u64);
    for t in tuples {
        t.obs.iter().for_each(|&v| o.f64(v));
    }
    for t in tuples {
        t.actions.iter().for_each(|&v| o.f64(v));
    }
    for t in tuples {
        t.goal.iter().for_each(|&v| o.f64(v));
    }
    for t in tuples {
        o.u64(t.plan_id);
    }
    for t in tuples {
        o.u64(t.chunk_index as u64);
    }
    for t in tuples {
        o.u64(t.t as u64);
    }
    for t in tuples {
        o.u64(t.h_g as u64);
    }
    Ok(o.seal())
}

pub fn decode_tuples(bytes: &[u8]) -> Result<TupleFile, DatasetError> {
    let mut r = In { buf: bytes, pos: 0 };
    r.magic(&TUPLE_MAGIC)?;
    let version = r.version()?;
    let rule_id = r.u8()?;
    r.take(3)?;
    let k = r.u32()? as usize;
    let rule = match rule_id {
        0 => GoalRule::All,
        1 if k >= 1 => GoalRule::Uniform(k),
        _ => {
            return Err(DatasetError::Corrupt(format!(
                "bad goal rule {rule_id}/{k}"
            )))
        }
    };
    let h_o = r.u32()? as usize;
    let h_a = r.u32()? as usize;
    let state_dim = r.u32()? as usize;
    let n_rbt = r.u32()? as usize;
    let goal_dim = r.u32()? as usize;
    if state_dim != POSE_DIM + n_rbt || goal_dim != GOAL_DIM {
        return Err(DatasetError::Corrupt(format!(
            "inconsistent dimensions: state {state_dim}, joints {n_rbt}, goal {goal_dim}"
        )));
    }
    let task_hash = r.digest()?;
    let n = r.usize()?;
    let header = TupleHeader {
        version,
        rule,
        h_o,
        h_a,
        n_rbt,
        task_hash,
    };
    let (ol, al) = (header.obs_len(), header.act_len());
    let obs = r.f64s(n.saturating_mul(ol))?;
    let act = r.f64s(n.saturating_mul(al))?;
    let goal = r.f64s(n.saturating_mul(GOAL_DIM))?;
    let plan = r.u64s(n)?;
    let chunk = r.u64s(n)?;
    let ts = r.u64s(n)?;
    let hg = r.u64s(n)?;
    r.finish()?;
    let tuples = (0..n)
        .map(|i| RelabeledTuple {
            plan_id: plan[i],
            chunk_index: chunk[i] as usize,
            t: ts[i] as usize,
            h_g: hg[i] as usize,
            obs: obs[i * ol..(i + 1) * ol].to_vec(),
            actions: act[i * al..(i + 1) * al].to_vec(),
            goal: goal[i * GOAL_DIM..(i + 1) * GOAL_DIM]
                .try_into()
                .expect("goal width"),
        })
        .collect();
    Ok(TupleFile { header, tuples })
}

pub fn write_tuples(
    path: &Path,
    header: &TupleHeader,
    tuples: &[RelabeledTuple],
) -> Result<(), DatasetError> {
    write_atomic(path, &encode_tuples(header, tuples)?)
}

pub fn read_tuples(path: &Path) -> Result<TupleFile, DatasetError> {
    decode_tuples(&fs::read(path)?)
}
