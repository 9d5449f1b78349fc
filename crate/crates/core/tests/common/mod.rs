#![allow(dead_code)]

use qt_core::corpus::{Minibatch, Vocabulary, PAD_ID};
use qt_core::encoder::{EncoderKind, Grad};
use qt_core::numkern::{Mat, Rng};
use qt_core::objective::ObjectiveKind;
use qt_core::trainer::{QtModel, TrainConfig};

pub const KINDS: [EncoderKind; 4] = [EncoderKind::Bow, EncoderKind::Gru, EncoderKind::BiGru, EncoderKind::MultiChannel];
pub const OBJECTIVES: [ObjectiveKind; 3] = [ObjectiveKind::Qt, ObjectiveKind::Binary, ObjectiveKind::Margin];

/// Five content words plus the two reserved ids: V = 7.
pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::build("a b c d e", 7).unwrap()
}

pub fn table<T: qt_core::numkern::Real>(rows: usize, cols: usize, seed: u64) -> Mat<T> {
    let mut rng = Rng::new(seed);
    let mut m = Mat::zeros(rows, cols);
    for x in m.data_mut() {
        *x = T::of(rng.uniform(-0.5, 0.5));
    }
    m.row_mut(PAD_ID as usize).fill(T::zero());
    m
}

/// d_w = 3, H = 4, with embeddings widened so activations are not all tiny.
pub fn check_model(kind: EncoderKind, objective: ObjectiveKind, seed: u64) -> QtModel<f64> {
    let config = TrainConfig { encoder: kind, objective, emb_dim: 3, hidden_dim: 4, seed, ..Default::default() };
    let vocab = tiny_vocab();
    let pretrained = table::<f64>(vocab.len(), 3, seed + 100);
    let mut model = QtModel::new(config, vocab, Some(&pretrained)).unwrap();
    let names: Vec<String> = model.tensors().iter().map(|t| t.name.clone()).collect();
    for (name, t) in names.iter().zip(model.tensors_mut()) {
        if name.ends_with("emb") {
            t.scale(5.0);
        }
    }
    model
}

/// B = 4, T <= 5, mixing lengths and the unknown-word id.
pub fn check_batch() -> Minibatch {
    let sents: Vec<Vec<u32>> = vec![vec![2, 3, 4], vec![5], vec![6, 2, 1, 3, 4], vec![3, 3]];
    Minibatch::from_sentences(&sents, (0..4).collect(), None).unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps near-zero entries from
/// turning rounding noise into large ratios.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences with step `h` over every entry of every trainable tensor.
pub fn finite_difference_check(model: &mut QtModel<f64>, batch: &Minibatch, h: f64) -> GradCheck {
    let (_, grads) = model.loss_and_grads(batch).unwrap();
    let meta: Vec<(String, bool, (usize, usize))> =
        model.tensors().iter().map(|t| (t.name.clone(), t.frozen, t.value.shape())).collect();
    let mut out = GradCheck { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for (k, (name, frozen, shape)) in meta.iter().enumerate() {
        if *frozen {
            continue;
        }
        let analytic = match &grads[k] {
            Grad::Dense(m) => m.clone(),
            g => g.to_dense(*shape).unwrap(),
        };
        for idx in 0..shape.0 * shape.1 {
            let orig = model.tensors_mut()[k].data()[idx];
            model.tensors_mut()[k].data_mut()[idx] = orig + h;
            let up = model.loss(batch).unwrap().loss;
            model.tensors_mut()[k].data_mut()[idx] = orig - h;
            let down = model.loss(batch).unwrap().loss;
            model.tensors_mut()[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_error(analytic.data()[idx], numeric);
            out.checked += 1;
            if e > out.max_rel_error {
                out.max_rel_error = e;
                out.worst = format!("{name}[{idx}] analytic {} numeric {numeric}", analytic.data()[idx]);
            }
        }
    }
    out
}

pub const TOPICS: usize = 10;
pub const WORDS_PER_TOPIC: usize = 50;

/// Sentences whose hidden topic follows a Markov chain that stays put with
/// probability `stay` and otherwise jumps to one of the other topics. Each
/// topic draws its 5 to 10 words uniformly from its own 50-word vocabulary.
/// Documents hold `doc_len` sentences and restart the chain.
pub fn markov_corpus(sentences: usize, doc_len: usize, stay: f64, seed: u64) -> String {
    markov_corpus_with_topics(sentences, doc_len, stay, seed).0
}

/// As [`markov_corpus`], also returning each sentence's hidden topic.
pub fn markov_corpus_with_topics(sentences: usize, doc_len: usize, stay: f64, seed: u64) -> (String, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let mut out = String::new();
    let mut topics = Vec::with_capacity(sentences);
    let mut topic = 0;
    for i in 0..sentences {
        if i % doc_len == 0 {
            if i > 0 {
                out.push('\n');
            }
            topic = rng.below(TOPICS);
        } else if rng.next_f64() >= stay {
            topic = (topic + 1 + rng.below(TOPICS - 1)) % TOPICS;
        }
        let len = 5 + rng.below(6);
        let words: Vec<String> =
            (0..len).map(|_| format!("t{topic}w{}", rng.below(WORDS_PER_TOPIC))).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
        topics.push(topic);
    }
    (out, topics)
}
