use std::collections::BTreeMap;

use anyhow::{bail, Result};
use attnseg::instance_assign::{segments_for_regions, SegmentPartition};
use attnseg::metrics::{instance_accuracy, miou, SceneAssignments, DEFAULT_IGNORE_ID};
use attnseg::tensor_store::read_mask;
use ndarray::Array2;

use crate::args::EvalArgs;
use crate::assign::AssignReport;
use crate::io::{mask_files, read_json, write_json};
use crate::settings::{print_header, FileConfig};
use crate::synth::InstanceTruth;

pub fn run(args: EvalArgs, file: &FileConfig) -> Result<()> {
    let classes: Vec<u8> = match (&args.classes, file.raw("classes")) {
        (Some(c), _) => c.clone(),
        (None, Some(raw)) => raw
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    attnseg::Error::Config(format!("invalid value {raw:?} for classes"))
                })
            })
            .collect::<Result<_, _>>()?,
        (None, None) => (0..=20).collect(),
    };
    let ignore = file.pick("ignore", args.ignore, DEFAULT_IGNORE_ID)?;
    let class_list: Vec<String> = classes.iter().map(u8::to_string).collect();
    print_header(
        "eval",
        &BTreeMap::from([
            ("classes".to_string(), class_list.join(",")),
            ("ignore".to_string(), ignore.to_string()),
        ]),
    );

    let semantic = match (&args.pred, &args.gt) {
        (Some(pred_dir), Some(gt_dir)) => {
            let preds = mask_files(pred_dir)?;
            let gts = mask_files(gt_dir)?;
            if gts.is_empty() {
                bail!(attnseg::Error::Invalid(format!(
                    "{} holds no masks",
                    gt_dir.display()
                )));
            }
            let (mut p, mut g) = (Vec::new(), Vec::new());
            for (id, gt_path) in &gts {
                let Some(pred_path) = preds.get(id) else {
                    bail!(attnseg::Error::Io {
                        path: pred_dir.join(format!("{id}.png")),
                        source: std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            "prediction missing for a ground-truth mask"
                        ),
                    });
                };
                p.push(read_mask(pred_path)?);
                g.push(read_mask(gt_path)?);
            }
            Some(miou(&p, &g, &classes, ignore)?)
        }
        (None, None) => None,
        _ => bail!(attnseg::Error::Invalid("--pred and --gt go together".into())),
    };

    let instances = if args.assignments.is_empty() && args.instance_truth.is_empty() {
        None
    } else {
        if args.assignments.len() != args.instance_truth.len() {
            bail!(attnseg::Error::Invalid(format!(
                "{} assignment files but {} truth files",
                args.assignments.len(),
                args.instance_truth.len()
            )));
        }
        let mut scenes = Vec::new();
        let mut truths = Vec::new();
        for (a, t) in args.assignments.iter().zip(&args.instance_truth) {
            let report: AssignReport = read_json(a)?;
            let truth: InstanceTruth = read_json(t)?;
            truths.push(true_segments(&report, &truth)?);
            scenes.push(SceneAssignments {
                greedy: report.greedy,
                hungarian: report.hungarian,
            });
        }
        Some(instance_accuracy(&scenes, &truths)?)
    };

    match (semantic, instances) {
        (Some(mut report), acc) => {
            if let Some(acc) = acc {
                report.bf_acc = Some(acc.bf_acc);
                report.af_acc = Some(acc.af_acc);
            }
            print!("{}", report.to_table());
            if let Some(out) = &args.out {
                write_json(out, &report)?;
            }
        }
        (None, Some(acc)) => {
            println!("bf_acc: {:.4}  af_acc: {:.4}  instances: {}", acc.bf_acc, acc.af_acc, acc.instances);
            if let Some(out) = &args.out {
                write_json(out, &acc)?;
            }
        }
        (None, None) => bail!(attnseg::Error::Invalid(
            "nothing to evaluate: give --pred/--gt or --assignments/--instance-truth".into()
        )),
    }
    Ok(())
}

/// Segment holding the majority of each true instance region.
fn true_segments(report: &AssignReport, truth: &InstanceTruth) -> Result<Vec<usize>> {
    let (w, h) = (report.width, report.height);
    if (truth.width, truth.height) != (w, h) || truth.regions.len() != w * h {
        bail!(attnseg::Error::Invalid(format!(
            "truth for {:?} is {}x{}, assignment grid is {w}x{h}",
            truth.image_id, truth.width, truth.height
        )));
    }
    let shape_err = |e: ndarray::ShapeError| attnseg::Error::Invalid(e.to_string());
    let partition = SegmentPartition {
        width: w,
        height: h,
        segment_ids: Array2::from_shape_vec((h, w), report.segment_ids.clone()).map_err(shape_err)?,
        n_segments: report.k,
        foreground: Array2::from_shape_vec((h, w), report.foreground.clone()).map_err(shape_err)?,
    };
    if partition.segment_ids.iter().any(|&s| s >= report.k) {
        bail!(attnseg::Error::Invalid("segment id outside [0, k)".into()));
    }
    let regions: Vec<Array2<bool>> = (0..truth.identifiers.len())
        .map(|i| Array2::from_shape_fn((h, w), |(y, x)| truth.regions[y * w + x] as usize == i + 1))
        .collect();
    Ok(segments_for_regions(&partition, &regions)?)
}
