//! End-to-end training behaviour on small problems.

use dvga_core::diffcore::Tensor;
use dvga_core::eval::factual_nll_y;
use dvga_core::graphdata::{Dataset, SplitIndex, SplitName};
use dvga_core::model::{Channel, LatentLayout, ModelConfig};
use dvga_core::synthgen::{generate, GenConfig};
use dvga_core::trainer::{self, RunConfig, TrainConfig, Trainer, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcomes linear in the features plus a treatment shift; no edges.
fn linear_toy() -> Dataset {
    let (n, k) = (200, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
    let beta = [0.8, -0.5, 0.3, 1.1];
    let treatment: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let outcome: Vec<f64> = (0..n)
        .map(|i| {
            let lin: f64 = (0..k).map(|j| beta[j] * x[i * k + j]).sum();
            lin + f64::from(treatment[i]) + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let splits = SplitIndex::random(&treatment, [0.6, 0.2, 0.2], 3).unwrap();
    Dataset {
        features: Tensor::matrix(n, k, x).unwrap(),
        adjacency: Dataset::adjacency_from_edges(n, &[]).unwrap(),
        treatment,
        outcome,
        truth: None,
        splits: Some(splits),
        meta: Default::default(),
    }
}

#[test]
fn outcome_decoder_loss_is_non_increasing_with_frozen_encoders() {
    let ds = linear_toy();
    let split = ds.splits.clone().unwrap();
    let mc = ModelConfig { layout: LatentLayout::uniform(2), gcn_layers: 1, hidden_dim: 16, head_hidden_dim: 16, seed: 4 };
    let tc = TrainConfig {
        learning_rate: 1e-3,
        alpha_t: 0.0,
        alpha_y: 0.0,
        alpha_1: 0.0,
        alpha_2: 0.0,
        lambda_l2: 0.0,
        epochs: 50,
        patience: None,
        reg_sample: None,
        frozen: vec!["enc.".into()],
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&ds, &split, &mc, &tc).unwrap();
    // Push the encoder variances to the clamp floor so the sampled latents
    // sit on their means and each step follows a near-deterministic path.
    let mut model = trainer.model().clone();
    for ch in Channel::ALL {
        let w = model.params.value_mut(&format!("enc.{}.logvar.w", ch.name())).unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = -50.0);
    }
    trainer.set_model(model).unwrap();

    let rows = split.get(SplitName::Train);
    let mut prev = factual_nll_y(trainer.model(), trainer.input(), &ds, rows).unwrap();
    let first = prev;
    while !trainer.finished() {
        trainer.step().unwrap();
        let cur = factual_nll_y(trainer.model(), trainer.input(), &ds, rows).unwrap();
        assert!(cur <= prev + 1e-9, "epoch {}: {cur} > {prev}", trainer.epoch());
        prev = cur;
    }
    assert_eq!(trainer.epoch(), 50);
    assert!(prev < first);
}

#[test]
fn every_variant_trains_and_reports() {
    let ds = generate(&GenConfig { n: 150, m_t: 2, m_c: 2, m_y: 2, m_o: 2, seed: 1, ..GenConfig::default() }).unwrap();
    let split = ds.splits.clone().unwrap();
    for variant in Variant::ALL {
        let mut run = RunConfig::default();
        run.model = ModelConfig { layout: LatentLayout::uniform(2), hidden_dim: 8, head_hidden_dim: 8, ..run.model };
        run.train = TrainConfig { variant, epochs: 3, eval_samples: 5, reg_sample: Some(32), ..run.train };
        let (outcome, report) = trainer::run(&ds, &split, &run, &SplitName::ALL).unwrap();
        assert_eq!(outcome.log.len(), 3);
        assert!(outcome.log.iter().all(|r| r.losses.total.is_finite()));
        let layout = outcome.model.config.layout;
        assert_eq!(layout, variant.layout(LatentLayout::uniform(2)));
        assert!(report.test_pehe().unwrap().is_finite());
        assert_eq!(report.metrics.len(), 3);
    }
}

#[test]
fn run_without_truth_reports_factual_loss() {
    let ds = linear_toy();
    let split = ds.splits.clone().unwrap();
    let mut run = RunConfig::default();
    run.model.hidden_dim = 8;
    run.model.head_hidden_dim = 8;
    run.train = TrainConfig { epochs: 2, eval_samples: 3, reg_sample: Some(32), ..run.train };
    let (_, report) = trainer::run(&ds, &split, &run, &[SplitName::Test]).unwrap();
    let m = &report.metrics[&SplitName::Test];
    assert!(m.pehe_root.is_none());
    assert!(m.nll_y.unwrap().is_finite());
}
