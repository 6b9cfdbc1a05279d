use subband_spoof::checkpoint::{self, Countermeasure};
use subband_spoof::experiment::{load_bank, sub_model_id};
use subband_spoof::frontend::{FrontendParams, Spectrogram};
use subband_spoof::models::{build_joint, BandAssignment, Classifier, Profile, SubCnn};
use subband_spoof::nn::{Adam, AdamConfig, NnRng};
use subband_spoof::subband::SubbandPlan;

mod common;

use rand::SeedableRng;

fn bank(dir: &std::path::Path, plan: &SubbandPlan, bands: &[usize]) {
    for &b in bands {
        let m: Countermeasure = SubCnn::custom(Profile::Reduced.config(plan.widths()[b]), 100 + b as u64)
            .unwrap()
            .with_band(BandAssignment {
                n_splits: plan.n(),
                band: b,
            })
            .into();
        let id = sub_model_id(plan.n(), b);
        checkpoint::save(
            &dir.join(&id).join("best").join("checkpoint"),
            &m,
            &id,
            &FrontendParams::default(),
            0,
        )
        .unwrap();
    }
}

#[test]
fn transferred_stages_equal_checkpoints_then_move() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = SubbandPlan::new(8).unwrap();
    let bands = [0, 7];
    bank(tmp.path(), &plan, &bands);
    let subs = load_bank(tmp.path(), &plan, &bands).unwrap();
    let mut joint = build_joint(&subs, &plan, &bands, true, 1).unwrap();
    assert_eq!(joint.embedding_stages().len(), 2);
    assert_eq!(joint.head_input_dim(), 64);

    for (stage, sub) in joint.embedding_stages().iter().zip(&subs) {
        let src = sub.embedding_stack();
        assert_eq!(stage.params().len(), src.params().len());
        for (a, b) in stage.params().iter().zip(src.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value, "{}", a.name);
        }
        for (a, b) in stage.buffers().iter().zip(src.buffers()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    let mut r = common::rng(4);
    let specs: Vec<Spectrogram> = (0..4).map(|_| common::random_spectrogram(&mut r, 300, 257)).collect();
    let refs: Vec<&Spectrogram> = specs.iter().collect();
    let targets = [1.0, 0.0, 1.0, 0.0];
    let mut rng = NnRng::seed_from_u64(0);
    let mut adam = Adam::new(AdamConfig::default());
    joint.accumulate_gradients(&refs, &targets, &mut rng).unwrap();
    adam.step(joint.params_mut());

    let moved = joint
        .embedding_stages()
        .iter()
        .zip(&subs)
        .flat_map(|(stage, sub)| stage.params().into_iter().zip(sub.embedding_stack().params()))
        .filter(|(a, b)| a.value != b.value)
        .count();
    assert!(moved > 0, "no embedding-stage tensor changed after one step");
}

#[test]
fn missing_band_checkpoint_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = SubbandPlan::new(8).unwrap();
    bank(tmp.path(), &plan, &[0]);
    let err = load_bank(tmp.path(), &plan, &[0, 7]).unwrap_err();
    assert!(err.to_string().contains("band 7"), "{err}");
}

#[test]
fn fresh_initialization_differs_from_transfer() {
    let plan = SubbandPlan::new(2).unwrap();
    let subs: Vec<SubCnn> = (0..2)
        .map(|b| SubCnn::custom(Profile::Reduced.config(plan.widths()[b]), b as u64).unwrap())
        .collect();
    let fresh = build_joint(&subs, &plan, &[0, 1], false, 5).unwrap();
    let same = fresh.embedding_stages()[0]
        .params()
        .iter()
        .zip(subs[0].embedding_stack().params())
        .all(|(a, b)| a.value == b.value);
    assert!(!same);
}
