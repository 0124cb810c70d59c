use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderError, Vocabulary};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Architecture settings. Defaults follow the reference configuration
/// (512-wide embeddings and LSTM, a 3-layer ReLU head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub embedding_dim: usize,
    pub lstm_dim: usize,
    /// Number of linear layers in the head, the last one producing the logit.
    pub mlp_layers: usize,
    pub mlp_hidden: usize,
    /// One embedding table for both encoders instead of one each.
    pub shared_embeddings: bool,
    /// Longer turns keep only their trailing tokens.
    pub max_len: usize,
    /// Non-reserved vocabulary entries kept from the training split.
    pub vocab_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            embedding_dim: 512,
            lstm_dim: 512,
            mlp_layers: 3,
            mlp_hidden: 512,
            shared_embeddings: false,
            max_len: 60,
            vocab_size: 20_000,
        }
    }
}

impl Hyperparams {
    /// Small configuration sized for the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            embedding_dim: 64,
            lstm_dim: 64,
            mlp_layers: 3,
            mlp_hidden: 64,
            shared_embeddings: false,
            max_len: 60,
            vocab_size: 2_000,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.embedding_dim == 0 || self.lstm_dim == 0 || self.mlp_hidden == 0 {
            return Err(EncoderError::InvalidConfig(
                "dimensions must be positive".into(),
            ));
        }
        if self.mlp_layers == 0 {
            return Err(EncoderError::InvalidConfig(
                "the head needs at least one layer".into(),
            ));
        }
        if self.max_len == 0 {
            return Err(EncoderError::InvalidConfig(
                "max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of one LSTM gate: input-to-hidden (H × E), hidden-to-hidden (H × H) and bias (H).
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams<T: Real = f32> {
    pub w_x: Tensor<T>,
    pub w_h: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T: Real = f32> {
    pub input: GateParams<T>,
    pub forget: GateParams<T>,
    pub output: GateParams<T>,
    pub candidate: GateParams<T>,
    pub hidden_dim: usize,
}

impl<T: Real> LstmParams<T> {
    /// Glorot-uniform weights (about ±0.08 at width 512), forget bias 1.
    fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let x_limit = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let h_limit = (6.0 / (2 * hidden_dim) as f64).sqrt();
        let mut gate = |bias: f64| GateParams {
            w_x: uniform(&[hidden_dim, input_dim], x_limit, rng),
            w_h: uniform(&[hidden_dim, hidden_dim], h_limit, rng),
            b: Tensor::filled(&[hidden_dim], T::of(bias)),
        };
        Self {
            input: gate(0.0),
            forget: gate(1.0),
            output: gate(0.0),
            candidate: gate(0.0),
            hidden_dim,
        }
    }

    fn gates(&self) -> [(&'static str, &GateParams<T>); 4] {
        [
            ("input", &self.input),
            ("forget", &self.forget),
            ("output", &self.output),
            ("candidate", &self.candidate),
        ]
    }

    fn gates_mut(&mut self) -> [&mut GateParams<T>; 4] {
        [
            &mut self.input,
            &mut self.forget,
            &mut self.output,
            &mut self.candidate,
        ]
    }

    fn cast<U: Real>(&self) -> LstmParams<U> {
        let g = |p: &GateParams<T>| GateParams {
            w_x: p.w_x.cast(),
            w_h: p.w_h.cast(),
            b: p.b.cast(),
        };
        LstmParams {
            input: g(&self.input),
            forget: g(&self.forget),
            output: g(&self.output),
            candidate: g(&self.candidate),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// One head layer: `w` is (out × in).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T: Real = f32> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Two LSTM sentence encoders whose final hidden states are concatenated and
/// scored by a ReLU MLP ending in a single sigmoid unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder<T: Real = f32> {
    pub hyper: Hyperparams,
    pub vocab: Vocabulary,
    pub question_embedding: Tensor<T>,
    /// `None` when the encoders share `question_embedding`.
    pub answer_embedding: Option<Tensor<T>>,
    pub question_lstm: LstmParams<T>,
    pub answer_lstm: LstmParams<T>,
    pub mlp: Vec<DenseLayer<T>>,
}

/// Embedding tables start as U(-EMBEDDING_INIT, EMBEDDING_INIT).
pub const EMBEDDING_INIT: f64 = 0.5;

fn uniform<T: Real>(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches count")
}

/// Graph handles for one encoder's parameters.
pub(crate) struct LstmVars {
    gates: [(Var, Var, Var); 4],
    hidden_dim: usize,
}

/// Every model parameter bound into a graph, in [`DualEncoder::params`] order.
pub(crate) struct BoundModel {
    question_embedding: Var,
    answer_embedding: Var,
    question_lstm: LstmVars,
    answer_lstm: LstmVars,
    mlp: Vec<(Var, Var)>,
    pub(crate) all: Vec<Var>,
}

/// Which encoder to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Question,
    Answer,
}

impl<T: Real> DualEncoder<T> {
    pub fn new(vocab: Vocabulary, hyper: Hyperparams, seed: u64) -> Result<Self, EncoderError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h) = (hyper.embedding_dim, hyper.lstm_dim);
        let v = vocab.len();
        let question_embedding = uniform(&[v, e], EMBEDDING_INIT, &mut rng);
        let answer_embedding =
            (!hyper.shared_embeddings).then(|| uniform(&[v, e], EMBEDDING_INIT, &mut rng));
        let question_lstm = LstmParams::init(e, h, &mut rng);
        let answer_lstm = LstmParams::init(e, h, &mut rng);
        let mut mlp = Vec::with_capacity(hyper.mlp_layers);
        let mut fan_in = 2 * h;
        for layer in 0..hyper.mlp_layers {
            let last = layer + 1 == hyper.mlp_layers;
            let out = if last { 1 } else { hyper.mlp_hidden };
            // He for ReLU layers, Glorot for the output unit.
            let limit = if last {
                (6.0 / (fan_in + out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            mlp.push(DenseLayer {
                w: uniform(&[out, fan_in], limit, &mut rng),
                b: Tensor::zeros(&[out]),
            });
            fan_in = out;
        }
        Ok(Self {
            hyper,
            vocab,
            question_embedding,
            answer_embedding,
            question_lstm,
            answer_lstm,
            mlp,
        })
    }

    pub fn cast<U: Real>(&self) -> DualEncoder<U> {
        DualEncoder {
            hyper: self.hyper.clone(),
            vocab: self.vocab.clone(),
            question_embedding: self.question_embedding.cast(),
            answer_embedding: self.answer_embedding.as_ref().map(Tensor::cast),
            question_lstm: self.question_lstm.cast(),
            answer_lstm: self.answer_lstm.cast(),
            mlp: self
                .mlp
                .iter()
                .map(|l| DenseLayer {
                    w: l.w.cast(),
                    b: l.b.cast(),
                })
                .collect(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hyper.lstm_dim
    }

    /// Named parameters in a fixed order (the checkpoint order).
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("question_embedding".to_string(), &self.question_embedding)];
        if let Some(a) = &self.answer_embedding {
            out.push(("answer_embedding".to_string(), a));
        }
        for (side, lstm) in [
            ("question_lstm", &self.question_lstm),
            ("answer_lstm", &self.answer_lstm),
        ] {
            for (gate, p) in lstm.gates() {
                out.push((format!("{side}.{gate}.w_x"), &p.w_x));
                out.push((format!("{side}.{gate}.w_h"), &p.w_h));
                out.push((format!("{side}.{gate}.b"), &p.b));
            }
        }
        for (i, l) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{i}.w"), &l.w));
            out.push((format!("mlp.{i}.b"), &l.b));
        }
        out
    }

    /// Mutable parameters in [`Self::params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.question_embedding];
        if let Some(a) = &mut self.answer_embedding {
            out.push(a);
        }
        for lstm in [&mut self.question_lstm, &mut self.answer_lstm] {
            for p in lstm.gates_mut() {
                out.push(&mut p.w_x);
                out.push(&mut p.w_h);
                out.push(&mut p.b);
            }
        }
        for l in &mut self.mlp {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    /// Replaces every parameter, in [`Self::params`] order.
    pub fn set_params(&mut self, values: &[Tensor<T>]) -> Result<(), EncoderError> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(EncoderError::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(EncoderError::InvalidConfig(format!(
                    "parameter shape {:?} does not match {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
            **slot = v.clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Token ids for a normalized sentence, keeping the trailing `max_len`.
    pub fn token_ids(&self, tokens: &[String]) -> Result<Vec<usize>, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        let start = tokens.len().saturating_sub(self.hyper.max_len);
        Ok(self.vocab.encode(&tokens[start..]))
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> BoundModel {
        let mut all = Vec::new();
        let mut bind = |g: &mut Graph<'a, T>, t: &'a Tensor<T>| {
            let v = g.param(t);
            all.push(v);
            v
        };
        let question_embedding = bind(g, &self.question_embedding);
        let answer_embedding = match &self.answer_embedding {
            Some(a) => bind(g, a),
            None => question_embedding,
        };
        let mut bind_lstm = |g: &mut Graph<'a, T>, lstm: &'a LstmParams<T>| {
            let gates = lstm
                .gates()
                .map(|(_, p)| (bind(g, &p.w_x), bind(g, &p.w_h), bind(g, &p.b)));
            LstmVars {
                gates,
                hidden_dim: lstm.hidden_dim,
            }
        };
        let question_lstm = bind_lstm(g, &self.question_lstm);
        let answer_lstm = bind_lstm(g, &self.answer_lstm);
        let mlp = self
            .mlp
            .iter()
            .map(|l| (bind(g, &l.w), bind(g, &l.b)))
            .collect();
        BoundModel {
            question_embedding,
            answer_embedding,
            question_lstm,
            answer_lstm,
            mlp,
            all,
        }
    }

    /// Runs one encoder over a batch of id sequences (right-padded, masked)
    /// and returns the (batch × hidden) matrix of final hidden states.
    pub(crate) fn encode_in_graph(
        &self,
        g: &mut Graph<'_, T>,
        bound: &BoundModel,
        side: Side,
        seqs: &[&[usize]],
    ) -> Result<Var, EncoderError> {
        let (emb, lstm) = match side {
            Side::Question => (bound.question_embedding, &bound.question_lstm),
            Side::Answer => (bound.answer_embedding, &bound.answer_lstm),
        };
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if batch == 0 || seqs.iter().any(|s| s.is_empty()) {
            return Err(EncoderError::EmptySequence);
        }
        let vocab_len = self.vocab.len();
        let mut ids = Vec::with_capacity(steps * batch);
        for t in 0..steps {
            for s in seqs {
                let id = s.get(t).copied().unwrap_or(Vocabulary::PAD);
                if id >= vocab_len {
                    return Err(EncoderError::TokenOutOfRange {
                        id,
                        vocab: vocab_len,
                    });
                }
                ids.push(id);
            }
        }
        let inputs = g.gather(emb, &ids)?;
        let hd = lstm.hidden_dim;
        let mut h = g.constant(Tensor::zeros(&[batch, hd]));
        let mut c = g.constant(Tensor::zeros(&[batch, hd]));
        for t in 0..steps {
            let x = g.rows(inputs, t * batch, batch)?;
            let mut pre = [x; 4];
            for (k, &(w_x, w_h, b)) in lstm.gates.iter().enumerate() {
                let from_x = g.linear(x, w_x, Some(b))?;
                // h is identically zero before the first step.
                pre[k] = if t == 0 {
                    from_x
                } else {
                    let from_h = g.linear(h, w_h, None)?;
                    g.add(from_x, from_h)?
                };
            }
            let i = g.sigmoid(pre[0]);
            let f = g.sigmoid(pre[1]);
            let o = g.sigmoid(pre[2]);
            let cand = g.tanh(pre[3]);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            let c_new = g.add(keep, write)?;
            let c_act = g.tanh(c_new);
            let h_new = g.mul(o, c_act)?;
            let mask: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
            if mask.iter().all(|&m| m) {
                c = c_new;
                h = h_new;
            } else {
                c = g.select_rows(&mask, c_new, c)?;
                h = g.select_rows(&mask, h_new, h)?;
            }
        }
        Ok(h)
    }

    /// Match probabilities for rows of concatenated (question, answer) encodings.
    pub(crate) fn head_in_graph(
        &self,
        g: &mut Graph<'_, T>,
        bound: &BoundModel,
        joint: Var,
    ) -> Result<Var, EncoderError> {
        let mut x = joint;
        let last = bound.mlp.len() - 1;
        for (i, &(w, b)) in bound.mlp.iter().enumerate() {
            x = g.linear(x, w, Some(b))?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(g.sigmoid(x))
    }

    /// Probabilities for a batch of (question ids, answer ids) pairs.
    pub(crate) fn probs_in_graph(
        &self,
        g: &mut Graph<'_, T>,
        bound: &BoundModel,
        questions: &[&[usize]],
        answers: &[&[usize]],
    ) -> Result<Var, EncoderError> {
        let hq = self.encode_in_graph(g, bound, Side::Question, questions)?;
        let ha = self.encode_in_graph(g, bound, Side::Answer, answers)?;
        let joint = g.concat(&[hq, ha], 1)?;
        self.head_in_graph(g, bound, joint)
    }

    /// Sentence embeddings (batch × hidden) from one encoder.
    pub fn encode_ids(&self, side: Side, seqs: &[&[usize]]) -> Result<Tensor<T>, EncoderError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let h = self.encode_in_graph(&mut g, &bound, side, seqs)?;
        Ok(g.value(h).clone())
    }

    /// Embedding of one normalized sentence.
    pub fn encode(&self, side: Side, tokens: &[String]) -> Result<Vec<T>, EncoderError> {
        let ids = self.token_ids(tokens)?;
        Ok(self.encode_ids(side, &[&ids])?.into_data())
    }

    /// Embeddings for many sentences, batched in chunks.
    pub fn encode_many(
        &self,
        side: Side,
        sentences: &[Vec<String>],
    ) -> Result<Tensor<T>, EncoderError> {
        let ids = sentences
            .iter()
            .map(|s| self.token_ids(s))
            .collect::<Result<Vec<_>, _>>()?;
        let hd = self.hidden_dim();
        let mut data = Vec::with_capacity(ids.len() * hd);
        for chunk in ids.chunks(256) {
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            data.extend_from_slice(self.encode_ids(side, &refs)?.data());
        }
        Ok(Tensor::new(vec![ids.len(), hd], data)?)
    }

    /// Match probability for one (question, answer) pair of token ids.
    pub fn forward_ids(&self, question: &[usize], answer: &[usize]) -> Result<T, EncoderError> {
        Ok(self.score_ids(&[question], &[answer])?[0])
    }

    /// Match probability for one normalized (question, answer) pair.
    pub fn forward(&self, question: &[String], answer: &[String]) -> Result<T, EncoderError> {
        let q = self.token_ids(question)?;
        let a = self.token_ids(answer)?;
        self.forward_ids(&q, &a)
    }

    /// Probabilities for aligned batches of question and answer ids.
    pub fn score_ids(
        &self,
        questions: &[&[usize]],
        answers: &[&[usize]],
    ) -> Result<Vec<T>, EncoderError> {
        if questions.len() != answers.len() {
            return Err(EncoderError::InvalidConfig(
                "question/answer batch sizes differ".into(),
            ));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let p = self.probs_in_graph(&mut g, &bound, questions, answers)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Head applied to one question embedding against precomputed answer
    /// embeddings (rows of `answers`).
    pub fn score_embeddings(
        &self,
        question: &[T],
        answers: &Tensor<T>,
    ) -> Result<Vec<T>, EncoderError> {
        let (rows, cols) = answers.dims2()?;
        let hd = self.hidden_dim();
        if cols != hd || question.len() != hd {
            return Err(EncoderError::InvalidConfig(format!(
                "embedding width {cols}/{} does not match hidden size {hd}",
                question.len()
            )));
        }
        if rows == 0 {
            return Ok(Vec::new());
        }
        let mut joint = Vec::with_capacity(rows * 2 * hd);
        for r in 0..rows {
            joint.extend_from_slice(question);
            joint.extend_from_slice(answers.row(r));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let j = g.constant(Tensor::new(vec![rows, 2 * hd], joint)?);
        let p = self.head_in_graph(&mut g, &bound, j)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Mean BCE over a batch and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        questions: &[&[usize]],
        answers: &[&[usize]],
        labels: &[T],
    ) -> Result<(f64, Vec<Tensor<T>>), EncoderError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let p = self.probs_in_graph(&mut g, &bound, questions, answers)?;
        let loss = g.bce(p, labels)?;
        g.backward(loss)?;
        let value = g.value(loss).data()[0].as_f64();
        let grads = bound.all.iter().map(|&v| g.grad_or_zeros(v)).collect();
        Ok((value, grads))
    }
}
