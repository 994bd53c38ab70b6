//! Synthetic scenes run through fusion, masks, instance assignment and
//! metrics.

use attnseg::fusion::{fuse, to_mask, FusionConfig};
use attnseg::instance_assign::{localize_instances, segments_for_regions, InstanceConfig};
use attnseg::metrics::{instance_accuracy, miou, SceneAssignments, DEFAULT_IGNORE_ID};
use attnseg::prompt_plan::PromptPlan;
use attnseg::synth::{
    make_fixture, make_instance_fixture, ClassRegion, InstanceRegion, InstanceSceneSpec, Rect,
    SceneSpec,
};

fn scene(grid: usize, classes: usize, alpha: f32, jitter: f32) -> SceneSpec {
    let names = ["aeroplane", "bus", "cat", "dog"];
    let ids = [1u8, 6, 8, 12];
    let half = grid / 2;
    let rects = [
        Rect::new(0, 0, half, half),
        Rect::new(half, half, grid, grid),
        Rect::new(half, 0, grid, half / 2),
        Rect::new(0, half + half / 2, half / 2, grid),
    ];
    SceneSpec {
        image_id: format!("s{grid}_{classes}"),
        grid: [grid, grid],
        image_scale: 2,
        tokens_per_class: 1 + classes % 2,
        beta: 1.0,
        self_jitter: jitter,
        cross_jitter: jitter,
        timestep: 150,
        sample_index: 0,
        backgrounds: vec![],
        background_alpha: 0.0,
        cross_layers: vec![],
        classes: (0..classes)
            .map(|i| ClassRegion {
                label: names[i].into(),
                class_id: ids[i],
                rect: rects[i],
                alpha,
            })
            .collect(),
    }
}

#[test]
fn noiseless_fixtures_are_recovered_exactly() {
    for grid in [8, 16, 32] {
        for classes in 1..=4 {
            let mut spec = scene(grid, classes, 1.0, 0.0);
            spec.image_scale = 1;
            let f = make_fixture(&spec, 0).unwrap();
            let plan = PromptPlan::from_manifest(&f.bundle.token_manifest);
            let sc = fuse(&f.bundle, &plan, &FusionConfig::default()).unwrap();
            let mask = to_mask(&sc, f.bundle.image_width, f.bundle.image_height, 0.05).unwrap();
            let mut ids: Vec<u8> = spec.classes.iter().map(|c| c.class_id).collect();
            ids.push(0);
            let r = miou(&[mask], &[f.ground_truth], &ids, DEFAULT_IGNORE_ID).unwrap();
            for (c, iou) in &r.per_class_iou {
                assert_eq!(*iou, 1.0, "grid {grid}, {classes} classes, class {c}");
            }
        }
    }
}

#[test]
fn upsampled_noiseless_fixtures_stay_close() {
    for classes in 1..=4 {
        let spec = scene(16, classes, 1.0, 0.0);
        let f = make_fixture(&spec, 0).unwrap();
        let plan = PromptPlan::from_manifest(&f.bundle.token_manifest);
        let sc = fuse(&f.bundle, &plan, &FusionConfig::default()).unwrap();
        let mask = to_mask(&sc, f.bundle.image_width, f.bundle.image_height, 0.05).unwrap();
        let r = miou(&[mask], &[f.ground_truth], &[0, 1, 6, 8, 12][..classes + 1], DEFAULT_IGNORE_ID).unwrap();
        assert!(r.miou > 0.9, "{classes} classes: {}", r.miou);
    }
}

#[test]
fn fixtures_are_deterministic_and_valid() {
    let spec = scene(16, 3, 0.7, 0.3);
    let a = make_fixture(&spec, 42).unwrap();
    let b = make_fixture(&spec, 42).unwrap();
    assert_eq!(a.bundle, b.bundle);
    assert_eq!(a.ground_truth, b.ground_truth);
    assert!(a.bundle.validate().is_ok());
}

#[test]
fn propagation_helps_on_a_jittered_fixture() {
    let spec = scene(16, 2, 0.7, 0.8);
    let f = make_fixture(&spec, 3).unwrap();
    let plan = PromptPlan::from_manifest(&f.bundle.token_manifest);
    let score = |order| {
        let cfg = FusionConfig { order, ..FusionConfig::default() };
        let sc = fuse(&f.bundle, &plan, &cfg).unwrap();
        let mask = to_mask(&sc, f.bundle.image_width, f.bundle.image_height, 0.05).unwrap();
        miou(&[mask], std::slice::from_ref(&f.ground_truth), &[0, 1, 6], DEFAULT_IGNORE_ID).unwrap().miou
    };
    assert!(score(2) >= score(0));
}

fn mugs(focus: [Option<Vec<f32>>; 2], jitter: f32) -> InstanceSceneSpec {
    let [f0, f1] = focus;
    InstanceSceneSpec {
        image_id: "mugs".into(),
        grid: [12, 12],
        image_scale: 1,
        class: "mug".into(),
        class_id: 1,
        alpha: 1.0,
        beta: 1.0,
        self_jitter: jitter,
        cross_jitter: jitter,
        timestep: 150,
        cross_layers: vec![],
        instances: vec![
            InstanceRegion { identifier: "<new1>".into(), rect: Rect::new(0, 0, 5, 5), focus: f0 },
            InstanceRegion { identifier: "<new2>".into(), rect: Rect::new(6, 6, 12, 12), focus: f1 },
        ],
    }
}

fn accuracy(spec: &InstanceSceneSpec, seed: u64, swap: bool) -> (f64, f64) {
    let f = make_instance_fixture(spec, seed).unwrap();
    let mut ids = f.identifiers.clone();
    if swap {
        ids.swap(0, 1);
    }
    let out = localize_instances(&f.scene, &ids, &FusionConfig::default(), &InstanceConfig::default()).unwrap();
    let truth = segments_for_regions(&out.partition, &f.regions).unwrap();
    let acc = instance_accuracy(
        &[SceneAssignments { greedy: out.greedy, hungarian: out.hungarian }],
        &[truth],
    )
    .unwrap();
    (acc.bf_acc, acc.af_acc)
}

#[test]
fn noiseless_instances_are_placed() {
    assert_eq!(accuracy(&mugs([None, None], 0.0), 0, false), (1.0, 1.0));
}

#[test]
fn swapped_identifiers_score_zero() {
    assert_eq!(accuracy(&mugs([None, None], 0.0), 0, true), (0.0, 0.0));
}

#[test]
fn collision_fixture_separates_greedy_from_hungarian() {
    let spec = mugs([Some(vec![1.0, 0.1]), Some(vec![1.0, 0.6])], 0.0);
    assert_eq!(accuracy(&spec, 0, false), (0.5, 1.0));
}

#[test]
fn jittered_collisions_never_favor_greedy() {
    let spec = mugs([Some(vec![1.0, 0.1]), Some(vec![1.0, 0.6])], 0.05);
    for seed in 0..5 {
        let (bf, af) = accuracy(&spec, seed, false);
        assert!(af >= bf, "seed {seed}: bf {bf} af {af}");
    }
}
