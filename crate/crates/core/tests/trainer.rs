use causal_hmm::baselines::Model;
use causal_hmm::evaluation::{accuracy, auc, evaluate_window, prediction_seed};
use causal_hmm::model::{ModelConfig, ModelKind, SeqBatch};
use causal_hmm::rng::GaussianNoise;
use causal_hmm::scm::{sample_split, ScmConfig, Split};
use causal_hmm::trainer::{train_on, TrainConfig};
use causal_hmm::types::{Label, SequenceSample};
use causal_hmm::Error;

fn data(seed: u64, n_train: usize, n_val: usize) -> (Vec<SequenceSample>, Vec<SequenceSample>) {
    let params = ScmConfig::small(seed).build().unwrap();
    let pop = &params.base_population;
    (
        sample_split(&params, pop, Split::Train, n_train).unwrap(),
        sample_split(&params, pop, Split::Val, n_val).unwrap(),
    )
}

fn model_config(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(4, 3, causal_hmm::types::ObservationKind::Vector { dim: 24 });
    cfg.kind = kind;
    cfg.d_s = 2;
    cfg.d_v = 2;
    cfg.d_z = 2;
    cfg.encoder_width = 32;
    cfg.encoder_depth = 2;
    cfg.posterior_hidden = 32;
    cfg.prior_hidden = 16;
    cfg.attribute_width = 8;
    cfg
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        n_mc_train: 2,
        n_mc_eval: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_same_history() {
    let (tr, va) = data(1, 24, 12);
    for kind in [ModelKind::CausalHmm, ModelKind::Recurrent] {
        let run = || {
            train_on(
                Model::build(&model_config(kind)).unwrap(),
                &tr,
                &va,
                &quick(3),
                &mut |_| Ok(()),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.store(), b.model.store());
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (tr, va) = data(2, 16, 10);
    let model = Model::build(&model_config(ModelKind::CausalHmm)).unwrap();
    let before = model.store().clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..quick(3)
    };
    let out = train_on(model, &tr, &va, &cfg, &mut |_| Ok(())).unwrap();
    assert_eq!(out.model.store(), &before);
    assert!(out
        .history
        .windows(2)
        .all(|w| w[0].val_auc == w[1].val_auc && w[0].val_acc == w[1].val_acc));
}

#[test]
fn returned_checkpoint_is_the_best_epoch() {
    let (tr, va) = data(3, 32, 20);
    let cfg = quick(8);
    let out = train_on(
        Model::build(&model_config(ModelKind::CausalHmm)).unwrap(),
        &tr,
        &va,
        &cfg,
        &mut |_| Ok(()),
    )
    .unwrap();
    let max = out
        .history
        .iter()
        .map(|r| r.val_auc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_auc, max);
    assert_eq!(out.history[out.best_epoch - 1].val_auc, max);
    let steps = va[0].len();
    let again = evaluate_window(
        &out.model,
        &va,
        (1, steps),
        cfg.n_mc_eval,
        prediction_seed(cfg.seed),
    )
    .unwrap();
    assert_eq!(again.auc, max);
}

#[test]
fn patience_stops_early() {
    let (tr, va) = data(4, 16, 10);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        patience: Some(2),
        ..quick(10)
    };
    let out = train_on(
        Model::build(&model_config(ModelKind::Feedforward)).unwrap(),
        &tr,
        &va,
        &cfg,
        &mut |_| Ok(()),
    )
    .unwrap();
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.best_epoch, 1);
}

#[test]
fn contract_and_config_errors() {
    let (tr, va) = data(5, 4, 4);
    let m = || Model::build(&model_config(ModelKind::CausalHmm)).unwrap();
    assert!(matches!(
        train_on(m(), &[], &va, &quick(1), &mut |_| Ok(())),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        train_on(m(), &tr, &[], &quick(1), &mut |_| Ok(())),
        Err(Error::Contract(_))
    ));
    let bad = TrainConfig {
        patience: Some(5),
        ..quick(2)
    };
    assert!(matches!(
        train_on(m(), &tr, &va, &bad, &mut |_| Ok(())),
        Err(Error::Config(_))
    ));
}

#[test]
fn non_finite_loss_names_a_term() {
    let (mut tr, va) = data(6, 4, 4);
    tr[0].steps[1].x[0] = 1e200;
    let err = train_on(
        Model::build(&model_config(ModelKind::CausalHmm)).unwrap(),
        &tr,
        &va,
        &quick(2),
        &mut |_| Ok(()),
    )
    .unwrap_err();
    match err {
        Error::NonFinite { term, epoch } => {
            assert_eq!(epoch, 1);
            assert!(
                term.starts_with("recon_x")
                    || term == "total"
                    || term == "gradient"
                    || term == "loss",
                "{term}"
            );
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn overfits_sixteen_sequences() {
    let (tr, _) = data(7, 16, 1);
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 16,
        learning_rate: 3e-3,
        n_mc_train: 4,
        n_mc_eval: 8,
        classification_weight: 30.0,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    let model = Model::build(&model_config(ModelKind::CausalHmm)).unwrap();
    // Selecting on the training split itself keeps the best-fitting epoch.
    let out = train_on(model, &tr, &tr, &cfg, &mut |r| {
        losses.push(r.loss);
        Ok(())
    })
    .unwrap();
    let batch = SeqBatch::from_samples(&tr).unwrap();
    let p = out.model.predict_proba(
        &batch,
        cfg.n_mc_eval,
        &mut GaussianNoise::new(prediction_seed(cfg.seed)),
    );
    let labels: Vec<Label> = tr.iter().map(|s| s.y).collect();
    let acc = accuracy(&p, &labels, 0.5).unwrap();
    assert!(acc >= 0.95, "train acc {acc}, auc {:?}", auc(&p, &labels));
    assert_eq!(acc, out.best_val_acc);
    let ma: Vec<f64> = losses
        .windows(50)
        .map(|w| w.iter().sum::<f64>() / 50.0)
        .collect();
    let checkpoints: Vec<f64> = ma.iter().step_by(50).copied().collect();
    assert!(
        checkpoints.windows(2).all(|w| w[1] <= w[0]),
        "{checkpoints:?}"
    );
}

#[test]
fn warmup_epochs_are_never_selected() {
    let (tr, va) = data(8, 16, 10);
    let cfg = TrainConfig {
        selection_warmup: 3,
        ..quick(5)
    };
    let out = train_on(
        Model::build(&model_config(ModelKind::Feedforward)).unwrap(),
        &tr,
        &va,
        &cfg,
        &mut |_| Ok(()),
    )
    .unwrap();
    assert_eq!(out.history.len(), 5);
    assert!(out.best_epoch > 3);
    let late = out.history[3..]
        .iter()
        .map(|r| r.val_auc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_auc, late);
    let bad = TrainConfig {
        selection_warmup: 5,
        ..quick(5)
    };
    assert!(bad.validate().is_err());
}
