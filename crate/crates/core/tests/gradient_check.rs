mod common;

use common::*;
use qt_core::encoder::EncoderKind;
use qt_core::objective::ObjectiveKind;
use qt_core::optim::AdamConfig;
use qt_core::trainer::{QtModel, TrainConfig, Trainer};

fn check(kind: EncoderKind, objective: ObjectiveKind) {
    for seed in [1, 2] {
        let mut model = check_model(kind, objective, seed);
        let r = finite_difference_check(&mut model, &check_batch(), 1e-5);
        assert!(r.checked > 0);
        assert!(r.max_rel_error < 1e-4, "{kind}/{objective} seed {seed}: {r:?}");
    }
}

#[test]
fn bow_gradients() {
    for o in OBJECTIVES {
        check(EncoderKind::Bow, o);
    }
}

#[test]
fn gru_gradients() {
    for o in OBJECTIVES {
        check(EncoderKind::Gru, o);
    }
}

#[test]
fn bigru_gradients() {
    for o in OBJECTIVES {
        check(EncoderKind::BiGru, o);
    }
}

#[test]
fn multichannel_gradients() {
    for o in OBJECTIVES {
        check(EncoderKind::MultiChannel, o);
    }
}

#[test]
fn wider_context_gradients() {
    let mut model = check_model(EncoderKind::Gru, ObjectiveKind::Qt, 3);
    model.config.context = qt_core::objective::ContextConfig::from_window(5).unwrap();
    let r = finite_difference_check(&mut model, &check_batch(), 1e-5);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn frozen_table_is_bit_identical_after_training() {
    let vocab = tiny_vocab();
    let config = TrainConfig {
        encoder: EncoderKind::MultiChannel,
        emb_dim: 3,
        hidden_dim: 4,
        batch_size: 4,
        adam: AdamConfig { lr: 0.1, ..Default::default() },
        ..Default::default()
    };
    let table = table::<f32>(vocab.len(), 3, 9);
    let model = QtModel::new(config, vocab, Some(&table)).unwrap();
    let before: Vec<(String, Vec<u32>)> = model
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.value.data().iter().map(|x| x.to_bits()).collect()))
        .collect();
    let mut trainer = Trainer::new(model).unwrap();
    for _ in 0..3 {
        trainer.train_step(&check_batch()).unwrap();
    }
    for (t, (name, bits)) in trainer.model().tensors().iter().zip(&before) {
        let now: Vec<u32> = t.value.data().iter().map(|x| x.to_bits()).collect();
        if name.ends_with("pretrained.emb") {
            assert_eq!(&now, bits, "{name} moved");
        } else if name.ends_with("trained.emb") || name.ends_with("w_z") {
            assert_ne!(&now, bits, "{name} did not train");
        }
    }
}
