use ammi::hashing::synth::{paired_corpus, topic_corpus, PairedCorpusConfig, TopicCorpusConfig};
use ammi::hashing::{build_tfidf, Corpus};
use ammi::training::{
    markov_projection, order_sweep, Checkpoint, Hyperparams, ModelKind, OrderSweepOptions, Trainer,
};
use ammi::Error;

fn small_topics() -> Corpus {
    let raw = topic_corpus(&TopicCorpusConfig {
        topics: 3,
        vocab: 300,
        train: 90,
        validation: 30,
        test: 30,
        min_len: 20,
        max_len: 40,
        purity: 0.7,
        ..Default::default()
    })
    .unwrap();
    build_tfidf(&raw, 200).unwrap()
}

fn small_pairs() -> Corpus {
    let raw = paired_corpus(&PairedCorpusConfig {
        topics: 4,
        vocab: 200,
        entities: 200,
        train: 60,
        validation: 20,
        test: 20,
        min_len: 20,
        max_len: 40,
        ..Default::default()
    })
    .unwrap();
    build_tfidf(&raw, 300).unwrap()
}

fn hyper(model: ModelKind) -> Hyperparams {
    Hyperparams {
        model,
        m: 6,
        r: 2,
        batch_size: 16,
        encoder_hidden: 32,
        prior_embed_dim: 8,
        prior_hidden: 32,
        max_epochs: 3,
        k: 10,
        vocab_size: 200,
        lr: 0.01,
        adv_lr: 0.01,
        ..Default::default()
    }
}

#[test]
fn training_is_reproducible() {
    let corpus = small_topics();
    for kind in [ModelKind::Ammi, ModelKind::Bmmi] {
        let hp = hyper(kind);
        let a = Trainer::new(&hp, &corpus).unwrap().train().unwrap();
        let b = Trainer::new(&hp, &corpus).unwrap().train().unwrap();
        assert_eq!(a, b);
        let other = Trainer::new(&Hyperparams { seed: 1, ..hp }, &corpus)
            .unwrap()
            .train()
            .unwrap();
        assert_ne!(a.params, other.params);
    }
}

#[test]
fn resuming_mid_epoch_matches_an_uninterrupted_run() {
    let corpus = small_topics();
    let hp = hyper(ModelKind::Ammi);
    let trainer = Trainer::new(&hp, &corpus).unwrap();
    let full = trainer.train().unwrap();

    let mut state = trainer.init_state();
    trainer.run(&mut state, Some(trainer.batches_per_epoch() + 2)).unwrap();
    assert_eq!(state.batch, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    Checkpoint { hyper: hp.clone(), state }.save(&path).unwrap();

    let mut resumed = Checkpoint::load_matching(&path, &hp).unwrap().state;
    trainer.run(&mut resumed, None).unwrap();
    assert_eq!(resumed.trace, full.trace);
    assert_eq!(resumed, full);
}

#[test]
fn checkpoints_round_trip_and_detect_corruption() {
    let corpus = small_pairs();
    let hp = Hyperparams { max_epochs: 1, ..hyper(ModelKind::Ammi) };
    let state = Trainer::new(&hp, &corpus).unwrap().train().unwrap();
    let ck = Checkpoint { hyper: hp.clone(), state };
    let bytes = ck.to_bytes();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    ck.save(&path).unwrap();
    let changed = Hyperparams { beta: 3.0, ..hp };
    assert!(matches!(
        Checkpoint::load_matching(&path, &changed),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn prior_is_initialized_once_and_frozen_without_learning_rate() {
    let corpus = small_topics();
    let hp = Hyperparams { adv_lr: 0.0, ..hyper(ModelKind::Ammi) };
    let trainer = Trainer::new(&hp, &corpus).unwrap();
    let start = trainer.init_state();
    let end = trainer.train().unwrap();
    assert_eq!(end.prior_inits, 1);
    for (name, t) in start.params.iter().filter(|(n, _)| n.starts_with("theta.")) {
        assert_eq!(end.params.get(name).unwrap(), t, "{name} moved");
    }
    // The encoder does move.
    let moved = start
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("psi."))
        .any(|(n, t)| end.params.get(n).unwrap() != t);
    assert!(moved);
}

#[test]
fn best_score_is_the_maximum_of_the_history() {
    let corpus = small_topics();
    let hp = Hyperparams { max_epochs: 4, ..hyper(ModelKind::Bmmi) };
    let s = Trainer::new(&hp, &corpus).unwrap().train().unwrap();
    assert_eq!(s.history.len(), 4);
    let best = s.history.iter().map(|h| h.validation_score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(s.best_score, best);
    assert_eq!(s.history[s.best_epoch - 1].validation_score, best);
    for h in &s.history {
        assert!(h.prior_loss.is_none());
        assert!((h.objective_bits * std::f64::consts::LN_2 - h.objective_nats).abs() < 1e-12);
    }
}

#[test]
fn patience_stops_training_early() {
    let corpus = small_topics();
    // A zero learning rate never improves on the first epoch.
    let hp = Hyperparams {
        lr: 0.0,
        patience: 2,
        max_epochs: 10,
        ..hyper(ModelKind::Bmmi)
    };
    let s = Trainer::new(&hp, &corpus).unwrap().train().unwrap();
    assert_eq!(s.history.len(), 3);
    assert_eq!(s.best_epoch, 1);
}

#[test]
fn predictive_training_uses_both_encoders() {
    let corpus = small_pairs();
    let hp = hyper(ModelKind::Ammi);
    let trainer = Trainer::new(&hp, &corpus).unwrap();
    assert!(trainer.model.is_predictive());
    assert_eq!(trainer.num_examples(), 60);
    let start = trainer.init_state();
    let end = trainer.train().unwrap();
    for prefix in ["psi.", "phi.", "theta."] {
        assert!(start.params.iter().any(|(n, t)| n.starts_with(prefix) && end.params.get(n).unwrap() != t));
    }
    let bmmi = Hyperparams { model: ModelKind::Bmmi, ..hp };
    assert!(!Trainer::new(&bmmi, &corpus).unwrap().model.is_predictive());
}

#[test]
fn order_sweep_rows_sit_above_the_reference() {
    let corpus = small_topics();
    let hp = Hyperparams { o: 0, max_epochs: 5, ..hyper(ModelKind::Bmmi) };
    let opts = OrderSweepOptions { steps: 300, ..Default::default() };
    let report = order_sweep(&corpus, &hp, &[0, 1, 2], &opts).unwrap();
    assert_eq!(report.partial_epochs, 1);
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        assert!(row.projection >= row.reference - 1e-9);
        assert!(row.cross_entropy >= row.projection - 1e-9);
    }
    assert!(order_sweep(&corpus, &Hyperparams { o: 1, r: 1, h: 1, ..hp.clone() }, &[0], &opts).is_err());
    assert!(order_sweep(&corpus, &hp, &[], &opts).is_err());
}

#[test]
fn projection_matches_an_exact_prior_on_identical_tables() {
    // A batch of one order-1 table is its own best order-1 prior.
    let p = ammi::markov::MarkovParams::new(3, 1, vec![0.2, 0.7, 0.4, 0.9, 0.3, 0.6]).unwrap();
    let (q, value) = markov_projection(&[p.clone(), p.clone()], 1).unwrap();
    // Context 1 at position 0 is unreachable; its conditional is free.
    assert!((q.prob(0, 0) - p.prob(0, 0)).abs() < 1e-12);
    for i in 1..3 {
        for ctx in 0..2 {
            assert!((q.prob(i, ctx) - p.prob(i, ctx)).abs() < 1e-12);
        }
    }
    assert!((value - ammi::markov::entropy(&p)).abs() < 1e-12);
}
