use fade_core::diffusion::*;
use fade_core::fade::*;
use fade_core::mesh::{attach, checksum};
use fade_core::neighborhood::{build_adjacency, world_embedding_table, AdjacencySet, Embedder};
use fade_core::numerics::gradcheck::{directional_check, random_direction};
use fade_core::numerics::{ParamSet, Tape, Tensor2};
use fade_core::rng::{normal_vec, rng_from_seed};
use fade_core::world::{ConceptId, ConceptWorld, WorldConfig};
use fade_core::Error;

const TARGET: ConceptId = ConceptId(0);
const NEIGHBOURS: [ConceptId; 3] = [ConceptId(1), ConceptId(2), ConceptId(3)];

fn mini_base(seed: u64) -> NoisePredictor {
    let cfg = DenoiserConfig {
        data_dim: 2,
        concepts: 6,
        time_dim: 4,
        concept_dim: 4,
        hidden: vec![8, 8],
    };
    NoisePredictor::new(cfg, NoiseSchedule::linear(30, 1e-3, 0.2).unwrap(), 1.0, seed).unwrap()
}

fn adapted(base: &NoisePredictor, randomize: Option<u64>) -> NoisePredictor {
    let mut m = base.clone();
    let targets = m.adaptable_matrices();
    attach(&mut m, &targets, 2, 5).unwrap();
    if let Some(seed) = randomize {
        let mut rng = rng_from_seed(seed);
        for (_, t) in m.adapters_mut().params.iter_mut() {
            let noise = Tensor2::from_vec(t.rows(), t.cols(), normal_vec(&mut rng, t.len())).unwrap();
            *t = noise.scale(0.3);
        }
    }
    m
}

fn batch(rows: usize, seed: u64) -> FadeBatch {
    let mut rng = rng_from_seed(seed);
    FadeBatch {
        unlearn: gaussian(&mut rng, rows, 2),
        unlearn_t: uniform_steps(&mut rng, rows, 30),
        adjacent: gaussian(&mut rng, rows, 2),
        adjacent_t: uniform_steps(&mut rng, rows, 30),
        adjacent_labels: (0..rows).map(|i| NEIGHBOURS[i % 3]).collect(),
    }
}

#[test]
fn hinge_examples() {
    assert_eq!(hinge(2.0, 0.5, 1.0), 2.5);
    assert_eq!(hinge(0.0, 5.0, 1.0), 0.0);
    assert_eq!(hinge(1.0, 2.0, 1.0), 0.0);
}

#[test]
fn weighted_total_examples() {
    let hyper = FadeHyper::default();
    let b = fade_total(1.0, 0.02, 0.001, &hyper, 1).unwrap();
    assert!((b.l_total - 5.0).abs() < 1e-10, "{b:?}");

    let zero = FadeHyper {
        lambda_er: 0.0,
        lambda_adj: 0.0,
        lambda_guid: 0.0,
        ..hyper
    };
    assert_eq!(fade_total(1.0, 2.0, 3.0, &zero, 1).unwrap().l_total, 0.0);

    let no_guid = FadeHyper {
        toggles: LossToggles {
            guidance: false,
            ..LossToggles::ALL
        },
        ..hyper
    };
    let b = fade_total(1.0, 0.02, 0.001, &no_guid, 1).unwrap();
    assert_eq!(b.l_guid, 0.0);
    assert!((b.l_total - 4.0).abs() < 1e-10);

    let off = FadeHyper {
        toggles: LossToggles {
            guidance: false,
            erasing: false,
            adjacency: false,
        },
        ..hyper
    };
    assert!(matches!(fade_total(1.0, 1.0, 1.0, &off, 1), Err(Error::Contract(_))));
    assert!(matches!(off.validate(), Err(Error::Config(_))));
}

#[test]
fn ablation_rows_are_the_six_combinations() {
    let rows = LossToggles::ablation_rows();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0], LossToggles::ALL);
    let mut uniq = rows.to_vec();
    uniq.dedup();
    assert_eq!(uniq.len(), 6);
    assert!(rows.iter().all(|r| r.any()));
}

#[test]
fn erasing_loss_at_zero_init_is_term_a_plus_margin() {
    let base = mini_base(1);
    let m = adapted(&base, None);
    let b = batch(4, 2);
    let rows = b.unlearn.rows();
    let own = base.predict_noise(&b.unlearn, &vec![TARGET.into(); rows], &b.unlearn_t).unwrap();
    let term_a = NEIGHBOURS
        .iter()
        .map(|&c| {
            let p = base.predict_noise(&b.unlearn, &vec![c.into(); rows], &b.unlearn_t).unwrap();
            own.sub(&p).unwrap().row_sq_norms().mean()
        })
        .sum::<f64>()
        / 3.0;
    let l = erasing_loss(&m, &base, &b, TARGET, &NEIGHBOURS, 1.0).unwrap();
    assert!(l > 0.0);
    assert!((l - (term_a + 1.0)).abs() < 1e-12, "{l} vs {}", term_a + 1.0);
    assert!(matches!(erasing_loss(&m, &base, &b, TARGET, &[], 1.0), Err(Error::Contract(_))));
}

#[test]
fn erasing_loss_is_never_negative() {
    let base = mini_base(1);
    for seed in 0..20 {
        let m = adapted(&base, Some(seed));
        let l = erasing_loss(&m, &base, &batch(3, seed), TARGET, &NEIGHBOURS, 0.0).unwrap();
        assert!(l >= 0.0);
    }
}

#[test]
fn guidance_loss_examples() {
    // Constant predictors in one dimension: 3 against 1 gives 4.
    let cfg = DenoiserConfig {
        data_dim: 1,
        concepts: 2,
        time_dim: 2,
        concept_dim: 2,
        hidden: vec![2],
    };
    let sched = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
    let mut base = NoisePredictor::new(cfg, sched, 1.0, 1).unwrap();
    *base.params_mut().get_mut("out.w").unwrap() = Tensor2::zeros(2, 1);
    let mut updated = base.clone();
    base.params_mut().get_mut("out.b").unwrap().set(0, 0, 1.0);
    updated.params_mut().get_mut("out.b").unwrap().set(0, 0, 3.0);
    let b = FadeBatch {
        unlearn: Tensor2::from_rows(&[[0.3], [-1.0]]).unwrap(),
        unlearn_t: vec![2, 7],
        adjacent: Tensor2::zeros(0, 1),
        adjacent_t: vec![],
        adjacent_labels: vec![],
    };
    assert!((guidance_loss(&updated, &base, &b, ConceptId(0)).unwrap() - 4.0).abs() < 1e-12);

    // Copying the null row onto the target row makes the two predictions equal.
    let base = mini_base(3);
    let mut copy = base.clone();
    let embed = copy.params_mut().get_mut(EMBED).unwrap();
    let null_row = embed.row(6).to_vec();
    embed.row_mut(0).copy_from_slice(&null_row);
    assert_eq!(guidance_loss(&copy, &base, &batch(5, 1), TARGET).unwrap(), 0.0);
}

#[test]
fn guidance_loss_ignores_batch_order() {
    let base = mini_base(1);
    let m = adapted(&base, Some(3));
    let b = batch(5, 4);
    let order = [4, 2, 0, 3, 1];
    let shuffled = FadeBatch {
        unlearn: b.unlearn.gather_rows(&order).unwrap(),
        unlearn_t: order.iter().map(|&i| b.unlearn_t[i]).collect(),
        ..b.clone()
    };
    let a = guidance_loss(&m, &base, &b, TARGET).unwrap();
    let s = guidance_loss(&m, &base, &shuffled, TARGET).unwrap();
    assert!((a - s).abs() < 1e-12);
}

#[test]
fn adjacency_loss_examples() {
    let base = mini_base(1);
    let mut m = adapted(&base, None);
    let b = batch(4, 5);
    assert_eq!(adjacency_loss(&m, &base, &b, &NEIGHBOURS).unwrap(), 0.0);

    m.adapters_mut().params.get_mut("h0.w.mesh_b").unwrap().set(0, 0, 0.1);
    assert!(adjacency_loss(&m, &base, &b, &NEIGHBOURS).unwrap() > 0.0);

    let one = FadeBatch {
        adjacent: b.adjacent.gather_rows(&[1]).unwrap(),
        adjacent_t: vec![b.adjacent_t[1]],
        adjacent_labels: vec![b.adjacent_labels[1]],
        ..b.clone()
    };
    let c = [Condition::Concept(one.adjacent_labels[0])];
    let ours = m.predict_noise(&one.adjacent, &c, &one.adjacent_t).unwrap();
    let orig = base.predict_noise(&one.adjacent, &c, &one.adjacent_t).unwrap();
    let pointwise: f64 = ours.data().iter().zip(orig.data()).map(|(a, b)| (a - b).powi(2)).sum();
    assert_eq!(adjacency_loss(&m, &base, &one, &NEIGHBOURS).unwrap(), pointwise);

    let bad = FadeBatch {
        adjacent_labels: vec![ConceptId(5); 4],
        ..b
    };
    assert!(matches!(adjacency_loss(&m, &base, &bad, &NEIGHBOURS), Err(Error::Contract(_))));
}

enum Term {
    Erasing,
    Guidance,
    Adjacency,
    Total,
}

fn term_value(m: &NoisePredictor, base: &NoisePredictor, b: &FadeBatch, hyper: &FadeHyper, term: &Term, params: &ParamSet) -> fade_core::Result<f64> {
    let mut m = m.clone();
    m.adapters_mut().params = params.clone();
    let mut tape = Tape::new();
    let t = record_fade_terms(&mut tape, &m, base, b, TARGET, &NEIGHBOURS, hyper, 0)?;
    Ok(match term {
        Term::Erasing => t.breakdown.l_er,
        Term::Guidance => t.breakdown.l_guid,
        Term::Adjacency => t.breakdown.l_adj,
        Term::Total => t.breakdown.l_total,
    })
}

#[test]
fn every_loss_gradient_matches_finite_differences() {
    let hyper = FadeHyper::default();
    let base = mini_base(11);
    for term in [Term::Erasing, Term::Guidance, Term::Adjacency, Term::Total] {
        for probe in 0..12u64 {
            let m = adapted(&base, Some(100 + probe));
            let b = batch(4, 200 + probe);
            let mut tape = Tape::new();
            let t = record_fade_terms(&mut tape, &m, &base, &b, TARGET, &NEIGHBOURS, &hyper, 0).unwrap();
            let var = match term {
                Term::Erasing => t.l_er.unwrap(),
                Term::Guidance => t.l_guid.unwrap(),
                Term::Adjacency => t.l_adj.unwrap(),
                Term::Total => t.total,
            };
            assert!(tape.value(var).item().unwrap() > 0.0);
            let params = m.adapters().params.clone();
            let grads = tape.backward(var, &params).unwrap();
            let dir = random_direction(&params, 300 + probe).unwrap();
            let check = directional_check(&params, &grads, &dir, 1e-5, |p| term_value(&m, &base, &b, &hyper, &term, p)).unwrap();
            assert!(check.relative_error(1e-8) <= 1e-4, "probe {probe}: {check:?}");
        }
    }
}

#[test]
fn base_weights_receive_no_gradient() {
    let base = mini_base(2);
    let m = adapted(&base, Some(1));
    let mut tape = Tape::new();
    let t = record_fade_terms(&mut tape, &m, &base, &batch(4, 1), TARGET, &NEIGHBOURS, &FadeHyper::default(), 0).unwrap();
    let grads = tape.backward(t.total, m.params()).unwrap();
    assert!(grads.flatten().iter().all(|&g| g == 0.0));
}

fn default_setup() -> (ConceptWorld, NoisePredictor, AdjacencySet) {
    let world = ConceptWorld::build(&WorldConfig::default()).unwrap();
    let mut model = default_model(&world, 1).unwrap();
    let cfg = BaseTrainConfig {
        steps: 200,
        ..BaseTrainConfig::default()
    };
    train_base(&mut model, &world, &cfg).unwrap();
    let table = world_embedding_table(&world, &Embedder::raw(2).unwrap(), 64, 1).unwrap();
    let adj = build_adjacency(&table, ConceptId(0), 5).unwrap();
    (world, model, adj)
}

#[test]
fn unlearn_is_deterministic_and_keeps_the_base() {
    let (world, base, adj) = default_setup();
    let sums: Vec<String> = base.params().iter().map(|(_, t)| checksum(t)).collect();
    let hyper = FadeHyper {
        iterations: 30,
        seed: 4,
        ..FadeHyper::default()
    };
    let cfg = FadeConfig::new(adj, hyper).unwrap();
    let a = unlearn(&base, &world, &cfg).unwrap();
    let b = unlearn(&base, &world, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model.adapters(), b.model.adapters());
    assert_eq!(a.trace.len(), 30);
    for row in &a.trace {
        assert!(row.l_er >= 0.0 && row.l_guid >= 0.0 && row.l_adj >= 0.0);
        let expect = 3.0 * row.l_er + 1000.0 * row.l_adj + 50.0 * row.l_guid;
        assert!((row.l_total - expect).abs() <= 1e-10 * expect.abs().max(1.0));
    }
    let after: Vec<String> = a.model.params().iter().map(|(_, t)| checksum(t)).collect();
    assert_eq!(sums, after);
    assert_eq!(base.params(), a.model.params());

    let mut buf = Vec::new();
    write_trace_csv(&a.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,l_er,l_guid,l_adj,l_total\n1,"));
}

#[test]
fn zero_iterations_change_nothing() {
    let (world, base, adj) = default_setup();
    let cfg = FadeConfig::new(
        adj,
        FadeHyper {
            iterations: 0,
            ..FadeHyper::default()
        },
    )
    .unwrap();
    let out = unlearn(&base, &world, &cfg).unwrap();
    assert!(out.trace.is_empty());
    let c = Condition::Concept(ConceptId(0));
    assert_eq!(out.model.sample(c, 64, 3).unwrap(), base.sample(c, 64, 3).unwrap());
}

#[test]
fn config_rejects_bad_adjacency() {
    let adj = AdjacencySet {
        target: ConceptId(0),
        neighbors: vec![(ConceptId(0), 1.0)],
    };
    assert!(FadeConfig::new(adj, FadeHyper::default()).is_err());
    let bad = FadeHyper {
        delta: -1.0,
        ..FadeHyper::default()
    };
    assert!(bad.validate().is_err());
}
