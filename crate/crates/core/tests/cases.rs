use std::collections::BTreeSet;

use crowngen_core::context::{
    assemble_sample, baseline_sample, build_context, sample_parts, select_context_classes, Arm, Budgets, CaseInput,
    Manifest, Split, MANIFEST_FILE,
};
use crowngen_core::geom::GINGIVA_CLASS;
use crowngen_core::synth::{generate_benchmark, generate_case, SynthParams};
use crowngen_core::{GeomError, Point};

fn case(prep_class: u32, seed: u64) -> CaseInput {
    generate_case("case_t", &SynthParams { prep_class, seed, ..Default::default() }).unwrap()
}

fn classes(mesh: &crowngen_core::TriangleMesh) -> BTreeSet<u32> {
    mesh.labels.as_ref().unwrap().iter().copied().collect()
}

/// Ranks every opposing class by the distance from its face-vertex centroid
/// to the prep centroid, recomputed from scratch.
fn oracle_opposing(case: &CaseInput) -> Vec<u32> {
    let centroid = |mesh: &crowngen_core::TriangleMesh, class: u32| {
        let labels = mesh.labels.as_ref().unwrap();
        let verts: BTreeSet<usize> = mesh
            .faces
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        let mut sum = [0.0; 3];
        for v in &verts {
            for a in 0..3 {
                sum[a] += mesh.vertices[*v][a];
            }
        }
        Point::new(sum[0], sum[1], sum[2]) / verts.len() as f64
    };
    let prep = centroid(&case.prep_arch, case.prep_class);
    let opp = case.opposing_arch.as_ref().unwrap();
    let mut ranked: Vec<(f64, u32)> = (1..=14).map(|c| ((centroid(opp, c) - prep).norm(), c)).collect();
    ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ranked[..3].iter().map(|&(_, c)| c).collect()
}

#[test]
fn context_classes_match_oracle() {
    for seed in 0..4 {
        let c = case(5, seed);
        let sel = select_context_classes(&c).unwrap();
        assert_eq!(sel.neighbor_classes, vec![4, 6]);
        assert_eq!(sel.opposing_classes, oracle_opposing(&c));
    }
}

#[test]
fn context_excludes_prep_and_unselected() {
    let c = case(5, 1);
    let ctx = build_context(&c, 2.0).unwrap();
    let sel = select_context_classes(&c).unwrap();
    let mut allowed: BTreeSet<u32> = sel.neighbor_classes.iter().chain(&sel.opposing_classes).copied().collect();
    allowed.insert(GINGIVA_CLASS);
    let got = classes(&ctx);
    assert!(got.is_subset(&allowed));
    assert!(got.contains(&GINGIVA_CLASS));
    // class 5 faces may only come from the opposing arch
    let count = |m: &crowngen_core::TriangleMesh, class: u32| m.labels.as_ref().unwrap().iter().filter(|&&l| l == class).count();
    let opp = c.opposing_arch.as_ref().unwrap();
    let expected = if sel.opposing_classes.contains(&5) { count(opp, 5) } else { 0 };
    assert_eq!(count(&ctx, 5), expected);
    for class in 1..=14 {
        if !allowed.contains(&class) {
            assert_eq!(count(&ctx, class), 0);
        }
    }
}

#[test]
fn prep_at_arch_end_has_one_neighbor() {
    let c = case(1, 3);
    let sel = select_context_classes(&c).unwrap();
    assert_eq!(sel.neighbor_classes, vec![2]);
    build_context(&c, 2.0).unwrap();
}

#[test]
fn zero_band_means_no_gingiva() {
    let c = case(7, 2);
    let ctx = build_context(&c, 0.0).unwrap();
    assert!(!classes(&ctx).contains(&GINGIVA_CLASS));
    let wide = build_context(&c, 2.0).unwrap();
    assert!(wide.faces.len() > ctx.faces.len());
}

#[test]
fn context_errors() {
    let mut c = case(5, 0);
    c.prep_class = 9;
    c.prep_arch.labels = Some(c.prep_arch.labels.unwrap().into_iter().map(|l| if l == 9 { 0 } else { l }).collect());
    assert!(matches!(build_context(&c, 2.0), Err(GeomError::Label(_))));
    let mut c = case(5, 0);
    c.opposing_arch = None;
    assert!(matches!(build_context(&c, 2.0), Err(GeomError::Input(_))));
}

#[test]
fn sample_budgets() {
    let c = case(5, 4);
    let ctx = build_context(&c, 2.0).unwrap();
    let b = Budgets::default();
    let s = assemble_sample(&c, &ctx, &b, 7).unwrap();
    assert_eq!(s.input_cloud.len(), 10240 + 1000 + 1024);
    assert_eq!(s.target_cloud.len(), 2568);
    let base = baseline_sample(&c, &ctx, &b, 7).unwrap();
    assert_eq!(base.input_cloud.len(), 10240 + 1024);
    assert_eq!(base.target_cloud.len(), 1568);

    let half = Budgets { context: 5120, margin: 500, shell: 784, die: 512 };
    let s = assemble_sample(&c, &ctx, &half, 7).unwrap();
    assert_eq!(s.input_cloud.len(), 5120 + 500 + 512);
    assert_eq!(s.target_cloud.len(), 1284);
}

#[test]
fn samples_are_deterministic_and_share_context() {
    let c = case(6, 5);
    let ctx = build_context(&c, 2.0).unwrap();
    let b = Budgets::default();
    assert_eq!(assemble_sample(&c, &ctx, &b, 11).unwrap(), assemble_sample(&c, &ctx, &b, 11).unwrap());
    assert_ne!(assemble_sample(&c, &ctx, &b, 11).unwrap(), assemble_sample(&c, &ctx, &b, 12).unwrap());
    let with = sample_parts(&c, &ctx, &b, 11, Arm::WithMargin).unwrap();
    let without = sample_parts(&c, &ctx, &b, 11, Arm::Baseline).unwrap();
    assert_eq!(with.context, without.context);
    assert_eq!(with.die, without.die);
    assert_eq!(with.shell, without.shell);
}

#[test]
fn baseline_without_margin_file() {
    let mut c = case(6, 5);
    c.gt_margin_polyline = None;
    let ctx = build_context(&c, 2.0).unwrap();
    assert!(baseline_sample(&c, &ctx, &Budgets::default(), 1).is_ok());
    assert!(matches!(assemble_sample(&c, &ctx, &Budgets::default(), 1), Err(GeomError::Input(_))));
}

#[test]
fn one_frame_for_input_and_target() {
    let c = case(8, 6);
    let ctx = build_context(&c, 2.0).unwrap();
    let b = Budgets::default();
    let s = assemble_sample(&c, &ctx, &b, 3).unwrap();
    let parts = sample_parts(&c, &ctx, &b, 3, Arm::WithMargin).unwrap();
    let world_target = s.transform.invert(&s.target_cloud);
    for (p, q) in world_target.points.iter().zip(parts.shell.points.iter().chain(&parts.margin.unwrap().points)) {
        assert!((p - q).norm() < 1e-9);
    }
    let world_input = s.transform.invert(&s.input_cloud);
    for (p, q) in world_input.points.iter().zip(&parts.context.points) {
        assert!((p - q).norm() < 1e-9);
    }
}

#[test]
fn generated_case_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let c = case(4, 8);
    c.write(dir.path(), Some(8)).unwrap();
    let back = CaseInput::load(dir.path()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let p = SynthParams { seed: 42, ..Default::default() };
    generate_case("x", &p).unwrap().write(a.path(), Some(42)).unwrap();
    generate_case("x", &p).unwrap().write(b.path(), Some(42)).unwrap();
    for f in ["prep_arch.ply", "opposing_arch.ply", "die.ply", "gt_shell.ply", "gt_margin.ply", "meta.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn benchmark_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_benchmark(dir.path(), 10, 5).unwrap();
    assert_eq!(m.ids(Split::Train).len(), 7);
    assert_eq!(m.ids(Split::Val).len(), 1);
    assert_eq!(m.ids(Split::Test).len(), 2);
    assert_eq!(Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
    for entry in &m.cases {
        CaseInput::load(&dir.path().join(&entry.id)).unwrap();
    }
    let again = tempfile::tempdir().unwrap();
    assert_eq!(generate_benchmark(again.path(), 10, 5).unwrap(), m);
    assert_eq!(
        std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
        std::fs::read(again.path().join(MANIFEST_FILE)).unwrap()
    );
    assert!(matches!(generate_benchmark(again.path(), 2, 5), Err(GeomError::Size(_))));
}
