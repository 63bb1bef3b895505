use fade_core::diffusion::*;
use fade_core::mesh::*;
use fade_core::numerics::Tensor2;
use fade_core::rng::{normal_vec, rng_from_seed};
use fade_core::world::ConceptId;
use fade_core::Error;

fn model(hidden: Vec<usize>) -> NoisePredictor {
    let cfg = DenoiserConfig {
        data_dim: 2,
        concepts: 9,
        time_dim: 4,
        concept_dim: 8,
        hidden,
    };
    NoisePredictor::new(cfg, NoiseSchedule::scaled_linear(50).unwrap(), 2.0, 3).unwrap()
}

fn probes(m: &NoisePredictor, count: usize, seed: u64) -> Vec<Tensor2> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|i| {
            let x = Tensor2::from_vec(1, 2, normal_vec(&mut rng, 2)).unwrap();
            let c = if i % 6 == 5 { Condition::Null } else { Condition::Concept(ConceptId(i % 5)) };
            m.predict_noise(&x, &[c], &[1 + i % 50]).unwrap()
        })
        .collect()
}

fn randomize_factors(m: &mut NoisePredictor, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for (_, t) in m.adapters_mut().params.iter_mut() {
        *t = Tensor2::from_vec(t.rows(), t.cols(), normal_vec(&mut rng, t.len())).unwrap();
    }
}

#[test]
fn zero_init_adapters_leave_outputs_bit_identical() {
    let mut m = model(vec![32, 32]);
    let before = probes(&m, 100, 1);
    let targets = m.adaptable_matrices();
    attach(&mut m, &targets, 4, 7).unwrap();
    assert_eq!(m.adapters().len(), 3);
    let after = probes(&m, 100, 1);
    let worst = before
        .iter()
        .zip(&after)
        .map(|(a, b)| a.max_abs_diff(b).unwrap())
        .fold(0.0, f64::max);
    assert_eq!(worst, 0.0);
}

#[test]
fn rank_one_on_four_by_four_adds_eight_scalars() {
    let mut m = model(vec![4, 4]);
    attach(&mut m, &["h1.w".to_string()], 1, 1).unwrap();
    assert_eq!(m.adapters().trainable_count(), 8);
}

#[test]
fn attach_guards() {
    let mut m = model(vec![4, 4]);
    let err = attach(&mut m, &["h1.w".to_string()], 3, 1).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    attach(&mut m, &["h1.w".to_string()], 2, 1).unwrap();
    assert!(matches!(attach(&mut m, &["h1.w".to_string()], 1, 1), Err(Error::Config(_))));
    assert!(matches!(attach(&mut m, &["out.w".to_string()], 1, 1), Err(Error::Config(_))));
}

#[test]
fn train_then_detach_restores_the_base() {
    let mut m = model(vec![16, 16]);
    let original = m.clone();
    let before = probes(&m, 100, 2);
    let targets = m.adaptable_matrices();
    attach(&mut m, &targets, 2, 7).unwrap();
    randomize_factors(&mut m, 9);
    assert_ne!(probes(&m, 100, 2), before);
    let removed = detach(&mut m).unwrap();
    assert_eq!(removed.len(), 3);
    assert_eq!(probes(&m, 100, 2), before);
    assert_eq!(m, original);

    // Nothing attached: a no-op.
    assert!(detach(&mut m).unwrap().is_empty());
    assert_eq!(m, original);
}

#[test]
fn corrupted_base_is_an_integrity_error() {
    let mut m = model(vec![8, 8]);
    let targets = m.adaptable_matrices();
    attach(&mut m, &targets, 2, 7).unwrap();
    m.params_mut().get_mut("h0.w").unwrap().set(0, 0, 42.0);
    assert!(matches!(detach(&mut m), Err(Error::Integrity(_))));
}

#[test]
fn delta_rank_never_exceeds_r() {
    for (seed, r) in [(1, 1), (2, 2), (3, 4)] {
        let mut m = model(vec![32, 32]);
        let targets = m.adaptable_matrices();
        attach(&mut m, &targets, r, seed).unwrap();
        randomize_factors(&mut m, seed + 10);
        for name in &targets {
            let delta = m.adapters().merge_delta(name).unwrap();
            let s = singular_values(&delta);
            assert!(s[r - 1] > 1e-6, "{name}: {s:?}");
            for v in &s[r..] {
                assert!(*v <= 1e-10 * s[0].max(1.0), "{name}: sigma {v} past rank {r}");
            }
            assert_eq!(numerical_rank(&delta, 1e-10), r);
        }
    }
}

#[test]
fn enabled_flag_switches_between_base_and_adapted() {
    let mut m = model(vec![8, 8]);
    let base = probes(&m, 20, 3);
    let targets = m.adaptable_matrices();
    attach(&mut m, &targets, 2, 1).unwrap();
    randomize_factors(&mut m, 4);
    let adapted = probes(&m, 20, 3);
    m.adapters_mut().set_enabled(false);
    assert_eq!(probes(&m, 20, 3), base);
    m.adapters_mut().set_enabled(true);
    assert_eq!(probes(&m, 20, 3), adapted);
}

#[test]
fn adapter_checkpoint_composes_with_its_base_only() {
    let mut m = model(vec![8, 8]);
    let targets = m.adaptable_matrices();
    attach(&mut m, &targets, 2, 1).unwrap();
    randomize_factors(&mut m, 4);
    let adapted = probes(&m, 20, 5);
    let text = AdapterCheckpoint::new(m.adapters().clone()).to_json().unwrap();
    let mut base = m.clone();
    detach(&mut base).unwrap();

    let mut fresh = NoisePredictor::from_json(&base.to_json().unwrap()).unwrap();
    load_adapters(&mut fresh, AdapterCheckpoint::from_json(&text).unwrap()).unwrap();
    assert_eq!(probes(&fresh, 20, 5), adapted);

    let mut other = model(vec![8, 8]);
    other.params_mut().get_mut("embed").unwrap().set(0, 0, 0.5);
    let set = AdapterCheckpoint::from_json(&text).unwrap();
    assert!(matches!(load_adapters(&mut other, set), Err(Error::Integrity(_))));
}
