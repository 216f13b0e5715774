//! Trajectory datasets and their binary container format.
//!
//! One container holds one case. Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "MDTRAJ\0\0"
//! version    u32      1
//! n_nodes    u64
//! n_channels u64
//! n_frames   u64
//! n_edges    u64
//! dt         f64
//! symmetric  u8
//! split      u8       0 train, 1 val, 2 test, 255 unlabeled
//! case id    str
//! channels   n_channels × str
//! n_params   u32, then n_params × (str, f64)
//! positions  n_nodes × 2 f64
//! edges      n_edges × 2 u64
//! times      n_frames f64
//! frames     n_frames × n_nodes × n_channels f64, node-major
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::bytes::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::field::{GlobalParams, StateField};
use crate::mesh::{EdgeSet, Mesh};

pub const CONTAINER_MAGIC: &[u8; 8] = b"MDTRAJ\0\0";
pub const CONTAINER_VERSION: u32 = 1;
pub const CONTAINER_EXT: &str = "mdt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(split: Option<Split>) -> u8 {
        match split {
            Some(Split::Train) => 0,
            Some(Split::Val) => 1,
            Some(Split::Test) => 2,
            None => 255,
        }
    }

    fn from_code(code: u8) -> Result<Option<Split>> {
        Ok(match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            255 => None,
            c => return Err(Error::Format(format!("unknown split code {c}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One simulated trajectory on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub mesh: Mesh,
    pub edges: EdgeSet,
    pub frames: Vec<StateField>,
    pub globals: GlobalParams,
    pub split: Option<Split>,
}

impl Case {
    pub fn dt(&self) -> Option<f64> {
        self.globals.dt()
    }

    pub fn channels(&self) -> &[String] {
        self.frames.first().map(|f| f.channels()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryDataset {
    pub cases: Vec<Case>,
}

impl TrajectoryDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Case> {
        self.cases.iter().filter(move |c| c.split == Some(split))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub case: String,
    pub frame: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(k) => write!(f, "case {} frame {}: {}", self.case, k, self.message),
            None => write!(f, "case {}: {}", self.case, self.message),
        }
    }
}

/// Lists every broken dataset invariant. An empty list means the dataset is valid.
pub fn validate_dataset(ds: &TrajectoryDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for case in &ds.cases {
        let mut push = |frame: Option<usize>, message: String| {
            out.push(Violation {
                case: case.id.clone(),
                frame,
                message,
            })
        };
        if case.frames.is_empty() {
            push(None, "no frames".into());
            continue;
        }
        if let Err(e) = case.globals.validate() {
            push(None, e.to_string());
        }
        let dt = case.dt();
        if dt.is_none() {
            push(None, "global parameters lack dt".into());
        }
        let n = case.mesh.n_nodes();
        let channels = case.frames[0].channels();
        for (k, f) in case.frames.iter().enumerate() {
            if f.n_nodes() != n {
                push(
                    Some(k),
                    format!("field has {} nodes, mesh has {}", f.n_nodes(), n),
                );
            }
            if f.channels() != channels {
                push(Some(k), "channel set differs from frame 0".into());
            }
            if !f.is_finite() {
                push(Some(k), "non-finite values".into());
            }
        }
        let t0 = case.frames[0].time;
        for k in 1..case.frames.len() {
            let t = case.frames[k].time;
            let step = t - case.frames[k - 1].time;
            if step <= 0.0 {
                push(Some(k), format!("timestamp not increasing (step {step})"));
            } else if let Some(dt) = dt {
                let expect = t0 + k as f64 * dt;
                if (t - expect).abs() > 1e-9 * (dt + expect.abs()) {
                    push(Some(k), format!("timestamp {t} is off the dt = {dt} grid"));
                }
            }
        }
    }
    out
}

pub fn encode_case(case: &Case) -> Result<Vec<u8>> {
    let first = case
        .frames
        .first()
        .ok_or_else(|| invalid(format!("case {} has no frames", case.id)))?;
    let dt = case
        .dt()
        .ok_or_else(|| invalid(format!("case {} has no dt", case.id)))?;
    let n = case.mesh.n_nodes();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CONTAINER_MAGIC);
    w.u32(CONTAINER_VERSION);
    w.u64(n as u64);
    w.u64(first.n_channels() as u64);
    w.u64(case.frames.len() as u64);
    w.u64(case.edges.len() as u64);
    w.f64(dt);
    w.u8(case.edges.is_symmetric() as u8);
    w.u8(Split::code(case.split));
    w.str(&case.id);
    for c in first.channels() {
        w.str(c);
    }
    w.u32(case.globals.len() as u32);
    for (k, v) in case.globals.iter() {
        w.str(k);
        w.f64(v);
    }
    for p in case.mesh.positions() {
        w.f64(p[0]);
        w.f64(p[1]);
    }
    for &(i, j) in case.edges.edges() {
        w.u64(i as u64);
        w.u64(j as u64);
    }
    for f in &case.frames {
        w.f64(f.time);
    }
    for (k, f) in case.frames.iter().enumerate() {
        if f.n_nodes() != n || !f.same_layout(first) {
            return Err(invalid(format!(
                "case {} frame {k} does not match the mesh and channel layout",
                case.id
            )));
        }
        for &v in f.values() {
            w.f64(v);
        }
    }
    Ok(w.0)
}

pub fn decode_case(bytes: &[u8]) -> Result<Case> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CONTAINER_MAGIC {
        return Err(Error::Format("bad container magic".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let n_nodes = r.usize()?;
    let n_channels = r.usize()?;
    let n_frames = r.usize()?;
    let n_edges = r.usize()?;
    let _dt = r.f64()?;
    let symmetric = r.u8()? != 0;
    let split = Split::from_code(r.u8()?)?;
    let id = r.str()?;
    let channels = (0..n_channels)
        .map(|_| r.str())
        .collect::<Result<Vec<_>>>()?;
    let n_params = r.u32()?;
    let mut globals = GlobalParams::default();
    for _ in 0..n_params {
        let k = r.str()?;
        let v = r.f64()?;
        globals.insert(k, v);
    }
    let positions = (0..n_nodes)
        .map(|_| Ok([r.f64()?, r.f64()?]))
        .collect::<Result<Vec<_>>>()?;
    let edges = (0..n_edges)
        .map(|_| Ok((r.usize()?, r.usize()?)))
        .collect::<Result<Vec<_>>>()?;
    let times = (0..n_frames).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(n_frames);
    for &t in &times {
        let values = (0..n_nodes * n_channels)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        frames.push(StateField::new(values, channels.clone(), t)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after container".into()));
    }
    let mesh = Mesh::new(positions)?;
    let edges = EdgeSet::new(edges, symmetric, n_nodes)?;
    Ok(Case {
        id,
        mesh,
        edges,
        frames,
        globals,
        split,
    })
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_case(path: &Path, case: &Case) -> Result<()> {
    write_atomic(path, &encode_case(case)?)
}

pub fn read_case(path: &Path) -> Result<Case> {
    decode_case(&fs::read(path)?)
}

pub fn case_file_name(id: &str) -> String {
    format!("{id}.{CONTAINER_EXT}")
}

/// Writes one container per case into `dir`, returning the paths in case order.
pub fn write_dataset(dir: &Path, ds: &TrajectoryDataset) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    ds.cases
        .iter()
        .map(|c| {
            let p = dir.join(case_file_name(&c.id));
            write_case(&p, c)?;
            Ok(p)
        })
        .collect()
}

/// Reads every container in `dir`, ordered by file name.
pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == CONTAINER_EXT))
        .collect();
    paths.sort();
    let cases = paths
        .iter()
        .map(|p| read_case(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryDataset { cases })
}
