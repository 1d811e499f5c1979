//! JSON-lines manifests tying frames, flows and masks together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cis_core::rng::derive;
use cis_core::synth::{gen_ideal_sample, RigidMotion, SceneMeta, SceneSample, SynthConfig};

use crate::codec;
use crate::error::{CliError, FormatError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub rotation: f64,
    pub translation: [f64; 2],
    pub center: [f64; 2],
}

impl From<RigidMotion> for Motion {
    fn from(m: RigidMotion) -> Self {
        Self { rotation: m.rotation, translation: m.translation, center: m.center }
    }
}

impl From<Motion> for RigidMotion {
    fn from(m: Motion) -> Self {
        Self { rotation: m.rotation, translation: m.translation, center: m.center }
    }
}

/// One scene. File paths are relative to the manifest's directory unless
/// absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub frame: PathBuf,
    pub flow: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub seed: u64,
    pub dt: i32,
    /// Groups rows into sequences for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground: Option<Motion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Motion>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = codec::read_bytes(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::format(path, FormatError::new(e.valid_up_to(), "not UTF-8")))?;
        let mut rows = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim();
            if !body.is_empty() {
                let row = serde_json::from_str(body).map_err(|e| CliError::format(path, FormatError::new(offset, e.to_string())))?;
                rows.push(row);
            }
            offset += line.len();
        }
        Ok(Self { path: path.to_path_buf(), rows })
    }

    pub fn write(path: &Path, rows: &[ManifestRow]) -> Result<()> {
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(r).expect("row serializes"));
            text.push('\n');
        }
        codec::write_bytes(path, text.as_bytes())
    }

    pub fn dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new(""))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir().join(p)
        }
    }

    /// Every referenced file, for checking before work starts.
    pub fn check_files(&self, need_masks: bool) -> Result<()> {
        let mut missing = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            if need_masks && r.mask.is_none() {
                return Err(CliError::Usage(format!("{}: row {} has no mask", self.path.display(), i + 1)));
            }
            for p in [Some(&r.frame), Some(&r.flow), r.mask.as_ref()].into_iter().flatten() {
                let full = self.resolve(p);
                if !full.is_file() {
                    missing.push(full.display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            return Err(CliError::Usage(format!("missing files: {}", missing.join(", "))));
        }
        Ok(())
    }

    /// Loads every row as a scene; rows without a mask get an empty one and
    /// rows without motions get identity motions.
    pub fn load_samples(&self) -> Result<Vec<SceneSample>> {
        self.check_files(false)?;
        self.rows.iter().map(|r| self.load_row(r)).collect()
    }

    pub fn load_row(&self, r: &ManifestRow) -> Result<SceneSample> {
        let frame = codec::ppm_read(&self.resolve(&r.frame))?;
        let flow = codec::flo_read(&self.resolve(&r.flow))?;
        let (w, h) = (frame.width(), frame.height());
        let mask = match &r.mask {
            Some(p) => codec::mask_read(&self.resolve(p))?,
            None => cis_core::Mask::empty(w, h),
        };
        if (flow.width(), flow.height()) != (w, h) || !mask.same_size(w, h) {
            return Err(CliError::Usage(format!("{}: frame, flow and mask sizes differ", r.frame.display())));
        }
        let still = RigidMotion { rotation: 0.0, translation: [0.0; 2], center: [0.0; 2] };
        let meta = SceneMeta {
            seed: r.seed,
            foreground: r.foreground.map_or(still, Into::into),
            background: r.background.map_or(still, Into::into),
            dt: r.dt,
        };
        Ok(SceneSample { frame, flow, mask, meta })
    }
}

/// File stem of scene `i`.
pub fn scene_name(i: usize) -> String {
    format!("{i:05}")
}

/// Writes `n` synthetic scenes under `out` (frames as PPM, flows as `.flo`,
/// masks as PGM) and returns the manifest path. Scene `i` uses seed
/// `derive(seed, i)`.
pub fn gen_dataset(n: usize, seed: u64, out: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let s = gen_ideal_sample(derive(seed, i as u64), cfg)?;
        let name = scene_name(i);
        let row = ManifestRow {
            frame: PathBuf::from(format!("frames/{name}.ppm")),
            flow: PathBuf::from(format!("flows/{name}.flo")),
            mask: Some(PathBuf::from(format!("masks/{name}.pgm"))),
            seed: s.meta.seed,
            dt: s.meta.dt,
            sequence: None,
            foreground: Some(s.meta.foreground.into()),
            background: Some(s.meta.background.into()),
        };
        codec::write_bytes(&out.join(&row.frame), &codec::encode_ppm(&s.frame))?;
        codec::flo_write(&out.join(&row.flow), &s.flow)?;
        codec::write_bytes(&out.join(row.mask.as_ref().unwrap()), &codec::encode_mask(&s.mask))?;
        rows.push(row);
    }
    let path = out.join(MANIFEST_FILE);
    Manifest::write(&path, &rows)?;
    Ok(path)
}
