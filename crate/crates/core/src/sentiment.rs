//! Sentiment channel: rule-based per-sentence polarity extraction and the
//! LSTM that predicts the ending's polarity from the body's trajectory.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    clip_global_norm, init_normal, init_zeros, zero_grads, AdamState, Graph, Tensor,
};
use crate::corpus::{is_word_token, tokenize, Story};
use crate::error::{Error, Result};
use crate::util::{substream, substream_indexed};

/// A negation within the window multiplies the valence by this factor.
pub const NEGATION_FACTOR: f64 = -0.74;
/// Tokens looked back when searching for a negation.
pub const NEGATION_WINDOW: usize = 3;
/// Increment carried by every booster token in the one-token-per-line list.
pub const DEFAULT_BOOST: f64 = 0.293;
/// LSTM hidden dimension; fixed by the model family.
pub const LSTM_HIDDEN: usize = 64;

const LEXICON_TSV: &str = include_str!("../assets/lexicon.tsv");
const BOOSTERS_TXT: &str = include_str!("../assets/boosters.txt");
const NEGATIONS_TXT: &str = include_str!("../assets/negations.txt");

/// Valence lexicon plus booster and negation token lists.
#[derive(Debug, Clone)]
pub struct SentimentLexicon {
    valence: HashMap<String, f64>,
    boosters: HashMap<String, f64>,
    negations: HashSet<String>,
}

impl SentimentLexicon {
    /// The lexicon bundled with the crate.
    pub fn bundled() -> Self {
        Self::assemble(
            parse_lexicon(LEXICON_TSV, "<bundled lexicon>").expect("bundled lexicon parses"),
            parse_token_list(BOOSTERS_TXT),
            parse_token_list(NEGATIONS_TXT),
        )
        .expect("bundled lexicon is in range")
    }

    /// Load from files, falling back to the bundled data for any path not
    /// given. Lexicon lines are `token<TAB>valence`; booster and negation
    /// files are one token per line; `#` starts a comment in all three.
    pub fn from_files(
        lexicon: Option<&Path>,
        boosters: Option<&Path>,
        negations: Option<&Path>,
    ) -> Result<Self> {
        let valence = match lexicon {
            Some(p) => parse_lexicon(&std::fs::read_to_string(p)?, &p.display().to_string())?,
            None => parse_lexicon(LEXICON_TSV, "<bundled lexicon>")?,
        };
        let boosters = match boosters {
            Some(p) => parse_token_list(&std::fs::read_to_string(p)?),
            None => parse_token_list(BOOSTERS_TXT),
        };
        let negations = match negations {
            Some(p) => parse_token_list(&std::fs::read_to_string(p)?),
            None => parse_token_list(NEGATIONS_TXT),
        };
        Self::assemble(valence, boosters, negations)
    }

    /// Build from in-memory parts (synthetic lexicons, tests).
    pub fn from_parts(
        valence: Vec<(String, f64)>,
        boosters: Vec<String>,
        negations: Vec<String>,
    ) -> Result<Self> {
        Self::assemble(valence.into_iter().collect(), boosters, negations)
    }

    fn assemble(
        valence: HashMap<String, f64>,
        boosters: Vec<String>,
        negations: Vec<String>,
    ) -> Result<Self> {
        for (token, v) in &valence {
            if !(-4.0..=4.0).contains(v) {
                return Err(Error::config(format!(
                    "lexicon valence for {token:?} is {v}, outside [-4, 4]"
                )));
            }
        }
        Ok(SentimentLexicon {
            valence,
            boosters: boosters
                .into_iter()
                .map(|t| (t, DEFAULT_BOOST))
                .collect(),
            negations: negations.into_iter().collect(),
        })
    }

    pub fn valence(&self, token: &str) -> f64 {
        self.valence.get(token).copied().unwrap_or(0.0)
    }

    pub fn booster(&self, token: &str) -> Option<f64> {
        self.boosters.get(token).copied()
    }

    pub fn is_negation(&self, token: &str) -> bool {
        self.negations.contains(token)
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }
}

fn parse_lexicon(text: &str, path: &str) -> Result<HashMap<String, f64>> {
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let token = parts.next().unwrap_or_default().trim();
        let value = parts.next().map(str::trim).and_then(|v| v.parse::<f64>().ok());
        match value {
            Some(v) if !token.is_empty() => {
                map.insert(token.to_string(), v);
            }
            _ => {
                return Err(Error::ParseLine {
                    path: path.to_string(),
                    line: idx + 1,
                    message: format!("expected `token<TAB>valence`, got {line:?}"),
                })
            }
        }
    }
    Ok(map)
}

fn parse_token_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Per-sentence polarity proportions; always a valid 3-simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentimentVector {
    pub pos: f64,
    pub neg: f64,
    pub neu: f64,
}

impl SentimentVector {
    pub const NEUTRAL: SentimentVector = SentimentVector {
        pos: 0.0,
        neg: 0.0,
        neu: 1.0,
    };

    pub fn to_array(self) -> [f64; 3] {
        [self.pos, self.neg, self.neu]
    }

    pub fn is_valid(&self) -> bool {
        self.pos >= 0.0
            && self.neg >= 0.0
            && self.neu >= 0.0
            && (self.pos + self.neg + self.neu - 1.0).abs() <= 1e-9
    }
}

/// Rule-based polarity of one sentence.
///
/// Rules, applied per token in order: look the token's valence up in the
/// lexicon (unknown word tokens are neutral); a booster immediately before a
/// valenced token adds its increment with the valence's sign; any negation
/// within the [`NEGATION_WINDOW`] tokens before it then multiplies the
/// valence by [`NEGATION_FACTOR`], at most once. Positive valences add v+1 to
/// the positive mass, negative add |v|+1 to the negative mass, and
/// zero-valence word tokens (punctuation excluded) count 1 toward neutral.
/// The triple is normalized to sum 1; a sentence with no word tokens is
/// wholly neutral.
pub fn sentence_polarity(sentence: &str, lexicon: &SentimentLexicon) -> SentimentVector {
    let tokens = tokenize(sentence);
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut neu = 0usize;
    for (i, token) in tokens.iter().enumerate() {
        if !is_word_token(token) {
            continue;
        }
        let mut v = lexicon.valence(token);
        if v == 0.0 {
            neu += 1;
            continue;
        }
        if i > 0 {
            if let Some(boost) = lexicon.booster(&tokens[i - 1]) {
                v += v.signum() * boost;
            }
        }
        let window_start = i.saturating_sub(NEGATION_WINDOW);
        if tokens[window_start..i].iter().any(|t| lexicon.is_negation(t)) {
            v *= NEGATION_FACTOR;
        }
        if v > 0.0 {
            pos += v + 1.0;
        } else {
            neg += -v + 1.0;
        }
    }
    let total = pos + neg + neu as f64;
    if total == 0.0 {
        return SentimentVector::NEUTRAL;
    }
    SentimentVector {
        pos: pos / total,
        neg: neg / total,
        neu: neu as f64 / total,
    }
}

/// Polarity vectors for the four body sentences.
pub fn body_polarities(story: &Story, lexicon: &SentimentLexicon) -> [SentimentVector; 4] {
    [
        sentence_polarity(&story.body[0], lexicon),
        sentence_polarity(&story.body[1], lexicon),
        sentence_polarity(&story.body[2], lexicon),
        sentence_polarity(&story.body[3], lexicon),
    ]
}

/// LSTM over the body's polarity trajectory plus the bilinear scoring head.
///
/// Gate layout along the 4·H columns of the input/recurrent weights is
/// [input | forget | candidate | output].
pub struct SentimentLstm {
    pub w_input: Tensor,   // [3 × 4H]
    pub w_hidden: Tensor,  // [H × 4H]
    pub bias: Tensor,      // [4H]
    pub w_out: Tensor,     // [H × 3]
    pub b_out: Tensor,     // [3]
    pub w_similarity: Tensor, // [3 × 3]
}

impl SentimentLstm {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let h = LSTM_HIDDEN;
        SentimentLstm {
            w_input: init_normal(&[3, 4 * h], rng),
            w_hidden: init_normal(&[h, 4 * h], rng),
            bias: init_zeros(&[4 * h]),
            w_out: init_normal(&[h, 3], rng),
            b_out: init_zeros(&[3]),
            w_similarity: init_normal(&[3, 3], rng),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.w_input.clone(),
            self.w_hidden.clone(),
            self.bias.clone(),
            self.w_out.clone(),
            self.b_out.clone(),
            self.w_similarity.clone(),
        ]
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("sentiment.w_input".to_string(), self.w_input.clone()),
            ("sentiment.w_hidden".to_string(), self.w_hidden.clone()),
            ("sentiment.bias".to_string(), self.bias.clone()),
            ("sentiment.w_out".to_string(), self.w_out.clone()),
            ("sentiment.b_out".to_string(), self.b_out.clone()),
            ("sentiment.w_similarity".to_string(), self.w_similarity.clone()),
        ]
    }

    fn step(&self, g: &mut Graph, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let hd = LSTM_HIDDEN;
        let from_x = g.matmul(x, &self.w_input)?;
        let from_h = g.matmul(h, &self.w_hidden)?;
        let preact = g.add(&from_x, &from_h)?;
        let z = g.add_bias(&preact, &self.bias)?;
        let input_gate = {
            let s = g.slice_cols(&z, 0, hd)?;
            g.sigmoid(&s)
        };
        let forget_gate = {
            let s = g.slice_cols(&z, hd, hd)?;
            g.sigmoid(&s)
        };
        let candidate = {
            let s = g.slice_cols(&z, 2 * hd, hd)?;
            g.tanh(&s)
        };
        let output_gate = {
            let s = g.slice_cols(&z, 3 * hd, hd)?;
            g.sigmoid(&s)
        };
        let kept = g.mul(&forget_gate, c)?;
        let written = g.mul(&input_gate, &candidate)?;
        let c_next = g.add(&kept, &written)?;
        let c_act = g.tanh(&c_next);
        let h_next = g.mul(&output_gate, &c_act)?;
        Ok((h_next, c_next))
    }

    /// Predicted ending polarity E_p from exactly four body polarities:
    /// the LSTM consumes them from a zero initial state and the final hidden
    /// state maps through the output layer and a softmax.
    pub fn predict(&self, g: &mut Graph, inputs: &[SentimentVector]) -> Result<Tensor> {
        if inputs.len() != 4 {
            return Err(Error::contract(format!(
                "sentiment prediction needs exactly 4 body vectors, got {}",
                inputs.len()
            )));
        }
        let mut h = Tensor::zeros(&[1, LSTM_HIDDEN]);
        let mut c = Tensor::zeros(&[1, LSTM_HIDDEN]);
        for e in inputs {
            let x = Tensor::constant(&[1, 3], e.to_array().to_vec())?;
            let (h2, c2) = self.step(g, &x, &h, &c)?;
            h = h2;
            c = c2;
        }
        let projected = g.matmul(&h, &self.w_out)?;
        let logits = g.add_bias(&projected, &self.b_out)?;
        g.softmax(&logits, 1)
    }

    /// Bilinear score E_p · W_s · E_e for one candidate ending.
    pub fn score_ending(
        &self,
        g: &mut Graph,
        predicted: &Tensor,
        ending: &SentimentVector,
    ) -> Result<Tensor> {
        let e_e = Tensor::constant(&[1, 3], ending.to_array().to_vec())?;
        let projected = g.matmul(predicted, &self.w_similarity)?;
        g.matmul_nt(&projected, &e_e)
    }
}

/// Pretraining options for the sentiment predictor.
#[derive(Debug, Clone, Copy)]
pub struct SentimentPretrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Mean cosine similarity between predicted and gold ending polarity over
/// `stories`, under a forward-only graph.
pub fn mean_similarity(
    stories: &[Story],
    model: &SentimentLstm,
    lexicon: &SentimentLexicon,
) -> Result<f64> {
    if stories.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for story in stories {
        let mut g = Graph::inference();
        let e_p = model.predict(&mut g, &body_polarities(story, lexicon))?;
        let e5 = sentence_polarity(story.gold_ending(), lexicon);
        let gold = Tensor::constant(&[1, 3], e5.to_array().to_vec())?;
        total += g.cosine(&e_p, &gold)?.item();
    }
    Ok(total / stories.len() as f64)
}

/// Maximize the mean cosine similarity between the predicted ending polarity
/// and the gold ending's polarity (implemented as minimizing its negation).
///
/// Returns the mean similarity curve: entry 0 is the pre-training value and
/// entry e the value after epoch e, measured over all of `stories`.
pub fn pretrain_sentiment(
    stories: &[Story],
    model: &SentimentLstm,
    lexicon: &SentimentLexicon,
    options: SentimentPretrainOptions,
) -> Result<Vec<f64>> {
    let params = model.params();
    let mut adam = AdamState::new(options.learning_rate)?;
    let batch_size = options.batch_size.max(1);
    let mut curve = vec![mean_similarity(stories, model, lexicon)?];
    for epoch in 0..options.epochs {
        let mut order: Vec<usize> = (0..stories.len()).collect();
        let mut rng = substream_indexed(options.seed, "sentiment-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let mut g = Graph::new();
            let mut batch_loss: Option<Tensor> = None;
            for &idx in chunk {
                let story = &stories[idx];
                let e_p = model.predict(&mut g, &body_polarities(story, lexicon))?;
                let e5 = sentence_polarity(story.gold_ending(), lexicon);
                let gold = Tensor::constant(&[1, 3], e5.to_array().to_vec())?;
                let sim = g.cosine(&e_p, &gold)?;
                let loss = g.scale(&sim, -1.0);
                batch_loss = Some(match batch_loss {
                    Some(acc) => g.add(&acc, &loss)?,
                    None => loss,
                });
            }
            if let Some(total) = batch_loss {
                let loss = g.scale(&total, 1.0 / chunk.len() as f64);
                if loss.requires_grad() {
                    g.backward(&loss)?;
                    clip_global_norm(&params, 1.0);
                    adam.step(&params);
                    zero_grads(&params);
                }
            }
        }
        curve.push(mean_similarity(stories, model, lexicon)?);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_lexicon() -> SentimentLexicon {
        SentimentLexicon::from_parts(
            vec![("good".into(), 3.0), ("bad".into(), -2.0)],
            vec!["very".into()],
            vec!["not".into()],
        )
        .unwrap()
    }

    #[test]
    fn empty_sentence_is_neutral() {
        let v = sentence_polarity("", &SentimentLexicon::bundled());
        assert_eq!(v, SentimentVector::NEUTRAL);
        let p = sentence_polarity("?!", &SentimentLexicon::bundled());
        assert_eq!(p, SentimentVector::NEUTRAL);
    }

    #[test]
    fn single_positive_word_saturates() {
        let v = sentence_polarity("good", &tiny_lexicon());
        assert!((v.pos - 1.0).abs() < 1e-12);
        assert_eq!(v.neg, 0.0);
        assert_eq!(v.neu, 0.0);
    }

    #[test]
    fn negation_flips_polarity() {
        let v = sentence_polarity("not good", &tiny_lexicon());
        assert!(v.neg > 0.0, "{v:?}");
        assert_eq!(v.pos, 0.0);
        // Hand trace: "not" neutral word (+1 count), good: 3 * -0.74 = -2.22
        // -> neg mass 3.22, neu 1 -> neg = 3.22/4.22.
        assert!((v.neg - 3.22 / 4.22).abs() < 1e-12);
        assert!((v.neu - 1.0 / 4.22).abs() < 1e-12);
    }

    #[test]
    fn booster_amplifies_with_sign() {
        let lex = tiny_lexicon();
        let plain = sentence_polarity("it was good", &lex);
        let boosted = sentence_polarity("it was very good", &lex);
        // very adds 0.293 to +3, and itself counts one more neutral token.
        let expected_pos = (3.0 + DEFAULT_BOOST + 1.0) / (3.0 + DEFAULT_BOOST + 1.0 + 3.0);
        assert!((boosted.pos - expected_pos).abs() < 1e-12);
        assert!(boosted.pos * (1.0 - plain.pos) > plain.pos * (1.0 - boosted.pos) - 1e-12);
        let negative = sentence_polarity("very bad", &lex);
        assert!((negative.neg - (2.0 + DEFAULT_BOOST + 1.0) / (2.0 + DEFAULT_BOOST + 1.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn polarity_is_pure() {
        let lex = SentimentLexicon::bundled();
        let a = sentence_polarity("Jane was very happy, not sad!", &lex);
        let b = sentence_polarity("Jane was very happy, not sad!", &lex);
        assert_eq!(a, b);
        assert!(a.is_valid());
    }

    #[test]
    fn bundled_lexicon_is_in_range() {
        let lex = SentimentLexicon::bundled();
        assert!(lex.len() > 100);
        assert!(lex.is_negation("not"));
        assert!(lex.is_negation("'t"));
        assert!(lex.booster("very").is_some());
    }

    #[test]
    fn out_of_range_valence_is_rejected() {
        let result = SentimentLexicon::from_parts(
            vec![("broken".into(), 5.0)],
            vec![],
            vec![],
        );
        assert!(result.is_err());
    }

    #[test]
    fn prediction_is_a_simplex_and_deterministic() {
        let mut rng = substream(9, "sent-test");
        let model = SentimentLstm::new(&mut rng);
        let inputs = [
            SentimentVector { pos: 0.7, neg: 0.1, neu: 0.2 },
            SentimentVector::NEUTRAL,
            SentimentVector { pos: 0.2, neg: 0.5, neu: 0.3 },
            SentimentVector { pos: 0.4, neg: 0.4, neu: 0.2 },
        ];
        let mut g = Graph::inference();
        let a = model.predict(&mut g, &inputs).unwrap().values();
        let b = model.predict(&mut g, &inputs).unwrap().values();
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p >= 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_input_count_is_an_error() {
        let mut rng = substream(9, "sent-test");
        let model = SentimentLstm::new(&mut rng);
        let mut g = Graph::inference();
        assert!(model.predict(&mut g, &[SentimentVector::NEUTRAL; 3]).is_err());
        assert!(model.predict(&mut g, &[SentimentVector::NEUTRAL; 5]).is_err());
    }

    #[test]
    fn identity_bilinear_prefers_matching_polarity() {
        let mut rng = substream(9, "sent-test");
        let mut model = SentimentLstm::new(&mut rng);
        model.w_similarity =
            Tensor::param(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let e_p = Tensor::constant(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::inference();
        let matching = model
            .score_ending(&mut g, &e_p, &SentimentVector { pos: 1.0, neg: 0.0, neu: 0.0 })
            .unwrap();
        let opposite = model
            .score_ending(&mut g, &e_p, &SentimentVector { pos: 0.0, neg: 1.0, neu: 0.0 })
            .unwrap();
        assert!(matching.item() > opposite.item());
        assert_eq!(matching.item(), 1.0);
        assert_eq!(opposite.item(), 0.0);
    }

    #[test]
    fn zero_epochs_leaves_parameters_unchanged() {
        let mut rng = substream(5, "sent-pre");
        let model = SentimentLstm::new(&mut rng);
        let before: Vec<Vec<f64>> = model.params().iter().map(Tensor::values).collect();
        let stories = vec![Story::unlabeled(
            "s",
            ["happy".into(), "happy".into(), "sad".into(), "happy".into()],
            "happy".into(),
        )];
        let curve = pretrain_sentiment(
            &stories,
            &model,
            &SentimentLexicon::bundled(),
            SentimentPretrainOptions {
                epochs: 0,
                learning_rate: 0.001,
                batch_size: 8,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(curve.len(), 1);
        let after: Vec<Vec<f64>> = model.params().iter().map(Tensor::values).collect();
        assert_eq!(before, after);
    }
}
