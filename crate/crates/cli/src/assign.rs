use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use attnseg::instance_assign::{localize_instances, AssignmentResult, InstanceConfig};
use attnseg::tensor_store::{read_bundle, write_mask, LabelMask, TokenKind};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::args::{AssignArgs, ModeArg};
use crate::io::write_json;
use crate::settings::{print_header, FileConfig};

/// On-disk result of one `assign` run.
#[derive(Debug, Serialize, Deserialize)]
pub struct AssignReport {
    pub image_id: String,
    pub labels: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub mode: String,
    pub width: usize,
    pub height: usize,
    /// Row-major segment id per grid cell.
    pub segment_ids: Vec<usize>,
    pub foreground: Vec<bool>,
    /// `scores[i][s]`: instance `i` on segment `s`.
    pub scores: Vec<Vec<f64>>,
    pub greedy: AssignmentResult,
    pub hungarian: AssignmentResult,
}

impl AssignReport {
    pub fn selected(&self) -> &AssignmentResult {
        if self.mode == "greedy" {
            &self.greedy
        } else {
            &self.hungarian
        }
    }
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Greedy => "greedy",
        ModeArg::Hungarian => "hungarian",
    }
}

pub fn run(args: AssignArgs, file: &FileConfig) -> Result<()> {
    let fusion = file.fusion(&args.fusion)?;
    let seed = file.pick("seed", args.seed, 0u64)?;
    let auto_k = args.auto_k || file.pick("auto-k", None, false)?;
    let k = file.pick_opt("k", args.k)?;
    let mode = match (args.mode, file.raw("mode")) {
        (Some(m), _) => m,
        (None, Some(raw)) => ModeArg::from_str(raw, false).map_err(|_| {
            attnseg::Error::Config(format!("invalid value {raw:?} for mode"))
        })?,
        (None, None) => ModeArg::Hungarian,
    };
    if auto_k && k.is_some() {
        bail!(attnseg::Error::Config("--k and --auto-k are exclusive".into()));
    }

    let mut header = fusion.to_key_values();
    header.insert("seed".into(), seed.to_string());
    header.insert("auto-k".into(), auto_k.to_string());
    header.insert("k".into(), k.map_or("instances+1".into(), |k| k.to_string()));
    header.insert("mode".into(), mode_name(mode).into());
    print_header("assign", &header);

    let scene = read_bundle(&args.scene)?;
    let identifiers = args
        .identifiers
        .iter()
        .map(|d| read_bundle(d))
        .collect::<attnseg::Result<Vec<_>>>()?;
    let config = InstanceConfig { k, auto_k, seed };
    let outcome = localize_instances(&scene, &identifiers, &fusion, &config)
        .context("localizing instances")?;

    let p = &outcome.partition;
    let report = AssignReport {
        image_id: scene.image_id.clone(),
        labels: outcome.labels.clone(),
        k: p.n_segments,
        seed,
        mode: mode_name(mode).into(),
        width: p.width,
        height: p.height,
        segment_ids: p.segment_ids.iter().copied().collect(),
        foreground: p.foreground.iter().copied().collect(),
        scores: outcome.scores.rows().into_iter().map(|r| r.to_vec()).collect(),
        greedy: outcome.greedy.clone(),
        hungarian: outcome.hungarian.clone(),
    };
    write_json(&args.out, &report)?;

    if let Some(path) = &args.mask {
        let ids: Vec<u8> = identifiers
            .iter()
            .zip(&outcome.labels)
            .map(|(b, label)| {
                b.token_manifest
                    .entries
                    .iter()
                    .find(|e| e.kind == TokenKind::Identifier && &e.label == label)
                    .and_then(|e| b.token_manifest.class_ids.get(&e.label).copied())
                    .ok_or_else(|| attnseg::Error::Invalid(format!("no class id for {label:?}")))
            })
            .collect::<attnseg::Result<_>>()?;
        let mask = instance_mask(&report, &ids, scene.image_width, scene.image_height)?;
        write_mask(path, &mask)?;
    }

    for a in &report.selected().assignments {
        let segs: Vec<String> = a.segments.iter().map(|s| s.to_string()).collect();
        println!("{}\tsegment {}\tscore {:.6}", a.label, segs.join(","), a.score);
    }
    Ok(())
}

/// Image-resolution mask: foreground cells of each instance's segment get
/// that instance's class id; the lower instance wins shared segments.
fn instance_mask(report: &AssignReport, ids: &[u8], iw: u32, ih: u32) -> Result<LabelMask> {
    let mut owner: BTreeMap<usize, u8> = BTreeMap::new();
    for a in &report.selected().assignments {
        for &s in &a.segments {
            owner.entry(s).or_insert(ids[a.instance]);
        }
    }
    let (gw, gh) = (report.width, report.height);
    let mut labels = Vec::with_capacity(iw as usize * ih as usize);
    for py in 0..ih as usize {
        let cy = (py * gh / ih as usize).min(gh - 1);
        for px in 0..iw as usize {
            let cx = (px * gw / iw as usize).min(gw - 1);
            let cell = cy * gw + cx;
            let label = if report.foreground[cell] {
                owner.get(&report.segment_ids[cell]).copied().unwrap_or(0)
            } else {
                0
            };
            labels.push(label);
        }
    }
    Ok(LabelMask::from_labels(iw, ih, labels)?)
}
