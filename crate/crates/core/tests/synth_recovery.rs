use std::collections::BTreeMap;

use gazefocus::cluster::{max_overlap_assignment, raw_confusion_matrix};
use gazefocus::ingest;
use gazefocus::pipeline::{run_pipeline, RunOptions};
use gazefocus::synth::{generate_session, PlantedTarget, SynthScript};
use gazefocus::Target;

#[test]
fn planted_fixation_targets_are_recovered() {
    for seed in [1u64, 2, 3] {
        let script = SynthScript::with_shares(seed, &[0.4, 0.3, 0.2, 0.1], 0.3, 300.0).unwrap();
        let session = generate_session(&script).unwrap();
        let dir = tempfile::tempdir().unwrap();
        session.write_to(dir.path()).unwrap();
        let bundle = ingest::load_bundle(dir.path(), &BTreeMap::new()).unwrap();
        let out = run_pipeline(&bundle, &RunOptions::default()).unwrap();

        let truth = &session.truth;
        let raw = raw_confusion_matrix(&out.clustering.detection_labels, &truth.detection_identity).unwrap();
        let mapping = max_overlap_assignment(raw.counts());

        let mut agree = 0;
        for fx in &out.fixations {
            let planted = truth
                .fixations
                .iter()
                .max_by_key(|p| (fx.end_us.min(p.end_us) - fx.start_us.max(p.start_us)).max(0))
                .unwrap();
            let ok = match (planted.target, fx.target) {
                (PlantedTarget::Identity(k), Target::Identity(label)) => mapping[label] == k,
                (PlantedTarget::Board, Target::Unassigned) => true,
                _ => false,
            };
            agree += ok as usize;
        }
        let rate = agree as f64 / out.fixations.len() as f64;
        assert!(rate >= 0.98, "seed {seed}: {agree}/{} fixations agree", out.fixations.len());
        assert!(out.fixations.len() >= truth.fixations.len() * 9 / 10);
    }
}
