//! Subcommand implementations. Each reads a resolved [`RunConfig`] and
//! writes only below its output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use cis_core::infomeasure::{
    brute_force_object, gaussian_irr, verify_statements, GaussianBlockModel, LatticeFlowSamples, StatementTolerances,
};
use cis_core::metrics::{sequence_metrics, MetricsReport};
use cis_core::numerics::gradcheck::layer_suite;
use cis_core::rng::derive;
use cis_core::synth::gen_ideal_sample;
use cis_core::training::{generator_loss_gradcheck, infer, train, Batch, HistoryRow, Players, TrainConfig};
use cis_core::{FlowField, Mask};

use crate::codec;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{gen_dataset, scene_name, Manifest, ManifestRow};

pub const HISTORY_FILE: &str = "history.csv";
pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const INPAINTER_FILE: &str = "inpainter.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PER_FRAME_FILE: &str = "per_frame.csv";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const IRR_FILE: &str = "irr.json";

/// Largest relative error accepted per layer.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Largest relative error accepted for the full loss.
pub const LOSS_TOLERANCE: f64 = 1e-4;

pub fn synth(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?;
    cfg.echo()?;
    gen_dataset(cfg.synth.count, cfg.seed, out, &cfg.synth_config())
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("step,term_in,term_out,total,train_j\n");
    for r in rows {
        let j = r.train_j.map(|j| j.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{j}", r.step, r.loss.term_in, r.loss.term_out, r.loss.total);
    }
    s
}

pub fn step_checkpoint_path(out: &Path, step: usize, player: &str) -> PathBuf {
    out.join("checkpoints").join(format!("step{step:06}_{player}.ckpt"))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Players> {
    let out = cfg.out_dir()?.to_path_buf();
    let manifest = Manifest::read(&cfg.existing("paths.dataset", cfg.paths.dataset.as_deref())?)?;
    let tc = cfg.train_config();
    tc.validate()?;
    manifest.check_files(tc.resample_motion || tc.train_j_every > 0)?;
    cfg.echo()?;
    let samples = manifest.load_samples()?;
    let outcome = train(&samples, &tc, &mut |step, players| {
        for (name, store) in [("generator", &players.generator), ("inpainter", &players.inpainter)] {
            let path = step_checkpoint_path(&out, step, name);
            codec::checkpoint_write(&path, store).map_err(|e| cis_core::Error::Invalid(e.to_string()))?;
        }
        Ok(())
    })?;
    codec::write_bytes(&out.join(HISTORY_FILE), history_csv(&outcome.history).as_bytes())?;
    codec::checkpoint_write(&out.join(GENERATOR_FILE), &outcome.players.generator)?;
    codec::checkpoint_write(&out.join(INPAINTER_FILE), &outcome.players.inpainter)?;
    Ok(outcome.players)
}

/// Rows sharing one frame file, in order of first appearance.
fn group_by_frame(manifest: &Manifest) -> Vec<Vec<&ManifestRow>> {
    let mut order: Vec<PathBuf> = Vec::new();
    let mut groups: BTreeMap<PathBuf, Vec<&ManifestRow>> = BTreeMap::new();
    for r in &manifest.rows {
        let key = manifest.resolve(&r.frame);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order.into_iter().map(|k| groups.remove(&k).unwrap()).collect()
}

/// Averages the generator over all flows listed for a frame and writes the
/// soft map and binary mask of every frame plus a prediction manifest.
pub fn infer_cmd(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?.to_path_buf();
    let manifest = Manifest::read(&cfg.existing("paths.dataset", cfg.paths.dataset.as_deref())?)?;
    let params = codec::checkpoint_read(&cfg.existing("paths.checkpoint", cfg.paths.checkpoint.as_deref())?)?;
    let gen_cfg = cfg.generator_config();
    gen_cfg.validate()?;
    manifest.check_files(false)?;
    cfg.echo()?;
    let icfg = cfg.train_config().infer_config();
    let mut rows = Vec::new();
    for (i, group) in group_by_frame(&manifest).into_iter().enumerate() {
        let first = group[0];
        let frame = codec::ppm_read(&manifest.resolve(&first.frame))?;
        let flows = group.iter().map(|r| codec::flo_read(&manifest.resolve(&r.flow))).collect::<Result<Vec<FlowField>>>()?;
        let refs: Vec<&FlowField> = flows.iter().collect();
        let (soft, hard) = infer(&frame, &refs, &params, &gen_cfg, &icfg)?;
        let name = scene_name(i);
        let soft_rel = PathBuf::from(format!("soft/{name}.pgm"));
        let mask_rel = PathBuf::from(format!("masks/{name}.pgm"));
        codec::write_bytes(&out.join(&soft_rel), &codec::encode_soft_mask(&soft))?;
        codec::write_bytes(&out.join(&mask_rel), &codec::encode_mask(&hard))?;
        rows.push(ManifestRow {
            frame: absolute(&manifest.resolve(&first.frame)),
            flow: absolute(&manifest.resolve(&first.flow)),
            mask: Some(mask_rel),
            seed: first.seed,
            dt: first.dt,
            sequence: first.sequence.clone(),
            foreground: None,
            background: None,
        });
    }
    let path = out.join(PREDICTIONS_FILE);
    Manifest::write(&path, &rows)?;
    Ok(path)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn report_json(reports: &[MetricsReport]) -> serde_json::Value {
    json!(reports
        .iter()
        .map(|r| json!({
            "sequence": r.sequence,
            "j": r.j, "f": r.f,
            "j_mean": r.j_mean, "j_recall": r.j_recall, "j_decay": r.j_decay,
            "f_mean": r.f_mean, "f_recall": r.f_recall, "f_decay": r.f_decay,
        }))
        .collect::<Vec<_>>())
}

/// Matches predictions to ground truth by frame file and scores each
/// sequence (rows without a `sequence` field form one sequence named
/// `all`).
pub fn eval_cmd(cfg: &RunConfig) -> Result<Vec<MetricsReport>> {
    let out = cfg.out_dir()?.to_path_buf();
    let preds = Manifest::read(&cfg.existing("paths.predictions", cfg.paths.predictions.as_deref())?)?;
    let gts = Manifest::read(&cfg.existing("paths.dataset", cfg.paths.dataset.as_deref())?)?;
    preds.check_files(true)?;
    gts.check_files(true)?;
    cfg.echo()?;
    let mut by_frame: BTreeMap<PathBuf, &ManifestRow> = BTreeMap::new();
    for r in &gts.rows {
        by_frame.entry(absolute(&gts.resolve(&r.frame))).or_insert(r);
    }
    let mut seqs: Vec<(String, Vec<(String, Mask, Mask)>)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for p in &preds.rows {
        let key = absolute(&preds.resolve(&p.frame));
        if !seen.insert(key.clone()) {
            continue;
        }
        let g = by_frame.get(&key).ok_or_else(|| CliError::Usage(format!("no ground truth for frame {}", key.display())))?;
        let name = g.sequence.clone().or_else(|| p.sequence.clone()).unwrap_or_else(|| "all".into());
        let pm = codec::mask_read(&preds.resolve(p.mask.as_ref().unwrap()))?;
        let gm = codec::mask_read(&gts.resolve(g.mask.as_ref().unwrap()))?;
        let entry = match seqs.iter_mut().position(|(n, _)| *n == name) {
            Some(i) => &mut seqs[i].1,
            None => {
                seqs.push((name.clone(), Vec::new()));
                &mut seqs.last_mut().unwrap().1
            }
        };
        entry.push((g.frame.display().to_string(), pm, gm));
    }
    let mut reports = Vec::new();
    let mut csv = String::from("sequence,frame,j,f\n");
    for (name, frames) in &seqs {
        let (p, g): (Vec<Mask>, Vec<Mask>) = frames.iter().map(|(_, p, g)| (p.clone(), g.clone())).unzip();
        let r = sequence_metrics(name, &p, &g, cfg.boundary_tolerance)?;
        for (k, (frame, _, _)) in frames.iter().enumerate() {
            let _ = writeln!(csv, "{name},{frame},{},{}", r.j[k], r.f[k]);
        }
        reports.push(r);
    }
    let text = serde_json::to_string_pretty(&report_json(&reports)).expect("report serializes");
    codec::write_bytes(&out.join(METRICS_FILE), format!("{text}\n").as_bytes())?;
    codec::write_bytes(&out.join(PER_FRAME_FILE), csv.as_bytes())?;
    Ok(reports)
}

/// Bit string with pixel 0 first.
pub fn region_bits(mask: u32, pixels: usize) -> String {
    (0..pixels).map(|i| if mask >> i & 1 == 1 { '1' } else { '0' }).collect()
}

/// Most square `(width, height)` with `width * height = pixels`.
fn lattice_shape(pixels: usize) -> (usize, usize) {
    let h = (1..=pixels).filter(|h| pixels % h == 0 && h * h <= pixels).max().unwrap_or(1);
    (pixels / h, h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTrial {
    pub object: u32,
    pub argmin: u32,
    pub recovered: bool,
    pub empty: f64,
    pub full: f64,
}

/// Enumerates every region of `oracle.trials` random lattices. The CSV
/// lists all `2^pixels` regions of each trial followed by two labelled
/// rows, `empty` and `full`.
pub fn oracle_cmd(cfg: &RunConfig) -> Result<Vec<OracleTrial>> {
    let out = cfg.out_dir()?.to_path_buf();
    let o = &cfg.oracle;
    let (w, h) = lattice_shape(o.pixels);
    cfg.echo()?;
    let mut csv = String::from("trial,region,term_in,term_out,total,is_object\n");
    let mut trials = Vec::new();
    for t in 0..o.trials {
        let seed = derive(cfg.seed, t as u64);
        let object = LatticeFlowSamples::random_object(o.pixels, o.object_size, seed);
        let samples = LatticeFlowSamples::generate(w, h, object, o.samples, o.motion_scale, o.noise, seed)?;
        let bf = brute_force_object(&samples, cfg.eps)?;
        let truth = samples.object_bits();
        for r in &bf.table {
            let is_object = r.mask == truth || r.mask == bf.complement(truth);
            let _ = writeln!(csv, "{t},{},{},{},{},{is_object}", region_bits(r.mask, o.pixels), r.term_in, r.term_out, r.total);
        }
        let full = bf.complement(0);
        for (label, m) in [("empty", 0), ("full", full)] {
            let r = &bf.table[m as usize];
            let _ = writeln!(csv, "{t},{label},{},{},{},false", r.term_in, r.term_out, r.total);
        }
        trials.push(OracleTrial { object: truth, argmin: bf.argmin, recovered: bf.recovers(truth), empty: bf.loss(0), full: bf.loss(full) });
    }
    codec::write_bytes(&out.join(ORACLE_FILE), csv.as_bytes())?;
    Ok(trials)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub tolerance: f64,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Small generator and inpainter on 16x16 scenes for the full-loss check.
pub fn gradcheck_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig { seed, batch_size: 2, ..TrainConfig::default() };
    for (h, w, ch, d, rates) in [
        (&mut c.generator.height, &mut c.generator.width, &mut c.generator.base_channels, &mut c.generator.encoder_depth, &mut c.generator.atrous_rates),
        (&mut c.inpainter.height, &mut c.inpainter.width, &mut c.inpainter.base_channels, &mut c.inpainter.encoder_depth, &mut c.inpainter.atrous_rates),
    ] {
        *h = 16;
        *w = 16;
        *ch = 2;
        *d = 2;
        *rates = vec![2];
    }
    c.synth.width = 16;
    c.synth.height = 16;
    c
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> Result<Vec<GradcheckLine>> {
    let out = cfg.out_dir()?.to_path_buf();
    cfg.echo()?;
    let mut lines: Vec<GradcheckLine> = layer_suite(cfg.seed)?
        .into_iter()
        .map(|c| GradcheckLine { name: c.name, max_rel_error: c.max_rel_error, entries: c.entries, tolerance: LAYER_TOLERANCE })
        .collect();
    let tc = gradcheck_config(cfg.seed);
    let samples = (0..2).map(|i| gen_ideal_sample(derive(cfg.seed, i), &tc.synth)).collect::<cis_core::Result<Vec<_>>>()?;
    let (err, entries) = generator_loss_gradcheck(&tc, &Batch::from_samples(&samples)?, 1e-5)?;
    lines.push(GradcheckLine { name: "full_loss".into(), max_rel_error: err, entries, tolerance: LOSS_TOLERANCE });
    let mut csv = String::from("check,max_rel_error,entries,tolerance,passed\n");
    for l in &lines {
        let _ = writeln!(csv, "{},{},{},{},{}", l.name, l.max_rel_error, l.entries, l.tolerance, l.passed());
    }
    codec::write_bytes(&out.join(GRADCHECK_FILE), csv.as_bytes())?;
    Ok(lines)
}

pub fn irr_demo(cfg: &RunConfig) -> Result<serde_json::Value> {
    let out = cfg.out_dir()?.to_path_buf();
    let p = &cfg.irr;
    cfg.echo()?;
    let model = GaussianBlockModel::equicorrelated(p.foreground, p.background, p.variance, p.rho_foreground, p.rho_background, p.cross)?;
    let (fg, bg) = (&model.foreground, &model.background);
    let report = verify_statements(&model, &StatementTolerances { seed: cfg.seed, ..StatementTolerances::default() })?;
    let value = json!({
        "entropy_foreground": model.entropy(fg)?,
        "entropy_background": model.entropy(bg)?,
        "mutual_information": model.mutual_information(fg, bg)?,
        "irr_foreground_given_background": gaussian_irr(&model, fg, bg)?,
        "irr_background_given_foreground": gaussian_irr(&model, bg, fg)?,
        "within_object_checks": report.count(cis_core::infomeasure::Statement::WithinObject),
        "across_boundary_checks": report.count(cis_core::infomeasure::Statement::AcrossBoundary),
        "min_within_object_mi": report.checks.iter().filter(|c| c.statement == cis_core::infomeasure::Statement::WithinObject).map(|c| c.mutual_information).fold(f64::INFINITY, f64::min),
        "max_across_boundary_mi": report.checks.iter().filter(|c| c.statement == cis_core::infomeasure::Statement::AcrossBoundary).map(|c| c.mutual_information.abs()).fold(0.0, f64::max),
        "skipped": report.skipped,
        "all_passed": report.all_passed(),
    });
    let text = serde_json::to_string_pretty(&value).expect("json serializes");
    codec::write_bytes(&out.join(IRR_FILE), format!("{text}\n").as_bytes())?;
    Ok(value)
}
