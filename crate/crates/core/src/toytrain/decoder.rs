//! Stand-in language decoder: a token embedding table and one affine softmax
//! readout. The context for position `i` is the mean of every sequence
//! embedding before `i`, so each prediction sees only its prefix.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Affine, ParamSet};

pub const DEFAULT_CONTEXT_CAP: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    /// `(vocab, d)`
    pub embedding: Array2<f64>,
    pub readout: Affine,
}

pub fn init_decoder(vocab: usize, dim: usize, seed: u64) -> Result<ToyDecoder> {
    if vocab < 2 {
        return Err(Error::InvalidConfig(format!("vocabulary must hold at least 2 tokens, got {vocab}")));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("decoder dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embed = Affine::uniform(dim, vocab, false, &mut rng);
    Ok(ToyDecoder {
        embedding: embed.weight,
        readout: Affine::uniform(dim, vocab, true, &mut rng),
    })
}

impl ToyDecoder {
    pub fn vocab(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Array2::zeros(self.embedding.raw_dim()),
            readout: self.readout.zeros_like(),
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab()) {
            Some(t) => Err(Error::InvalidConfig(format!(
                "token {t} outside vocabulary of {}",
                self.vocab()
            ))),
            None => Ok(()),
        }
    }
}

impl ParamSet for ToyDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &format!("{prefix}.embedding"),
            self.embedding.shape(),
            self.embedding.as_slice().expect("standard layout"),
        );
        self.readout.visit(&format!("{prefix}.readout"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(
            &format!("{prefix}.embedding"),
            self.embedding.as_slice_mut().expect("standard layout"),
        );
        self.readout.visit_mut(&format!("{prefix}.readout"), f);
    }
}

/// `[visual tokens][instruction embeddings][response embeddings]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInput {
    pub embeddings: Array2<f64>,
    pub visual_len: usize,
    pub instruction: Vec<usize>,
    pub response: Vec<usize>,
}

impl DecoderInput {
    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prefix_len(&self) -> usize {
        self.visual_len + self.instruction.len()
    }
}

pub fn sequence_assemble(
    enriched: &Array3<f64>,
    instruction: &[usize],
    response: &[usize],
    decoder: &ToyDecoder,
    context_cap: usize,
) -> Result<DecoderInput> {
    let (t, n, d) = enriched.dim();
    if d != decoder.dim() {
        return Err(Error::ShapeMismatch(format!(
            "visual token dim {d}, decoder dim {}",
            decoder.dim()
        )));
    }
    let visual_len = t * n;
    let len = visual_len + instruction.len() + response.len();
    if len > context_cap {
        return Err(Error::ContextOverflow { len, cap: context_cap });
    }
    decoder.check_tokens(instruction)?;
    decoder.check_tokens(response)?;
    let mut embeddings = Array2::zeros((len, d));
    embeddings
        .slice_mut(s![..visual_len, ..])
        .assign(&enriched.to_shape((visual_len, d)).expect("contiguous"));
    for (row, &tok) in instruction.iter().chain(response).enumerate() {
        embeddings
            .row_mut(visual_len + row)
            .assign(&decoder.embedding.row(tok));
    }
    Ok(DecoderInput {
        embeddings,
        visual_len,
        instruction: instruction.to_vec(),
        response: response.to_vec(),
    })
}

/// Mean-of-prefix context vectors, one per response position.
fn contexts(input: &DecoderInput) -> Array2<f64> {
    let p = input.prefix_len();
    let d = input.embeddings.ncols();
    let mut out = Array2::zeros((input.response.len(), d));
    let mut running: Array1<f64> = input.embeddings.slice(s![..p, ..]).sum_axis(Axis(0));
    for i in 0..input.response.len() {
        if i > 0 {
            running += &input.embeddings.row(p + i - 1);
        }
        out.row_mut(i).assign(&(&running / (p + i) as f64));
    }
    out
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

fn check_loss_inputs(input: &DecoderInput, targets: &[usize], decoder: &ToyDecoder) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("response has no tokens".into()));
    }
    if targets.len() != input.response.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} response positions",
            targets.len(),
            input.response.len()
        )));
    }
    if input.prefix_len() == 0 {
        return Err(Error::EmptyInput("no context before the response".into()));
    }
    decoder.check_tokens(targets)
}

/// Mean negative log-likelihood of the response tokens.
pub fn autoregressive_loss(input: &DecoderInput, targets: &[usize], decoder: &ToyDecoder) -> Result<f64> {
    check_loss_inputs(input, targets, decoder)?;
    let logits = decoder.readout.forward(contexts(input).view());
    let nll: f64 = logits
        .outer_iter()
        .zip(targets)
        .map(|(row, &tok)| -log_softmax_row(row)[tok])
        .sum();
    Ok(nll / targets.len() as f64)
}

/// Loss, `∂L/∂embeddings` for every sequence row, and decoder gradients.
/// Embedding-table gradients include the instruction and response rows.
pub fn loss_and_grad(
    input: &DecoderInput,
    targets: &[usize],
    decoder: &ToyDecoder,
) -> Result<(f64, Array2<f64>, ToyDecoder)> {
    check_loss_inputs(input, targets, decoder)?;
    let ctx = contexts(input);
    let logits = decoder.readout.forward(ctx.view());
    let count = targets.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    for (i, &tok) in targets.iter().enumerate() {
        let logp = log_softmax_row(logits.row(i));
        loss -= logp[tok];
        let mut g = logp.mapv(f64::exp);
        g[tok] -= 1.0;
        d_logits.row_mut(i).assign(&(g / count));
    }
    let mut grads = decoder.zeros_like();
    let d_ctx = decoder.readout.backward(ctx.view(), d_logits.view(), &mut grads.readout);

    let p = input.prefix_len();
    let mut d_seq = Array2::zeros(input.embeddings.raw_dim());
    // row r feeds every context at position i with p + i > r
    let mut suffix = Array1::<f64>::zeros(input.embeddings.ncols());
    for i in (0..targets.len()).rev() {
        if p + i < input.len() {
            d_seq.row_mut(p + i).assign(&suffix);
        }
        suffix += &(&d_ctx.row(i) / (p + i) as f64);
    }
    for r in 0..p {
        d_seq.row_mut(r).assign(&suffix);
    }
    for (k, &tok) in input.instruction.iter().chain(&input.response).enumerate() {
        let mut row = grads.embedding.row_mut(tok);
        row += &d_seq.row(input.visual_len + k);
    }
    Ok((loss / count, d_seq, grads))
}

/// Logits for the first response position given the prefix only.
pub fn first_token_logits(input: &DecoderInput, decoder: &ToyDecoder) -> Result<Array1<f64>> {
    let p = input.prefix_len();
    if p == 0 {
        return Err(Error::EmptyInput("no context before the response".into()));
    }
    let ctx = input.embeddings.slice(s![..p, ..]).sum_axis(Axis(0)) / p as f64;
    let logits = decoder.readout.forward(ctx.insert_axis(Axis(0)).view());
    Ok(logits.row(0).to_owned())
}
