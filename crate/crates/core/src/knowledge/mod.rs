//! Commonsense channel: keyword extraction, stem-aware embedding distance
//! between a candidate ending and each body sentence, and the linear head
//! that turns the distance vector into a score.

mod embed;
mod stem;

pub use embed::EmbeddingTable;
pub use stem::stem;

use std::collections::HashSet;
use std::sync::OnceLock;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{cosine_similarity, init_normal, init_zeros, Graph, Tensor};
use crate::corpus::{is_word_token, tokenize};
use crate::error::Result;

const STOPWORDS_TXT: &str = include_str!("../../assets/stopwords.txt");

/// The bundled stopword set (tokens dropped during keyword extraction).
pub fn stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    })
}

/// Tokenize and drop stopwords and pure-punctuation tokens. Order and
/// duplicates are preserved.
pub fn extract_keywords(sentence: &str) -> Vec<String> {
    let stop = stopwords();
    tokenize(sentence)
        .into_iter()
        .filter(|t| is_word_token(t) && !stop.contains(t))
        .collect()
}

/// One alignment score per body sentence, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceVector(pub [f64; 4]);

impl DistanceVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / 4.0
    }
}

/// Knowledge distance between a candidate ending and the four body sentences.
///
/// For each body sentence, every ending keyword contributes its best cosine
/// similarity against the sentence's keywords, skipping pairs that share a
/// stem; the running best starts at 0, so negative similarities never
/// propagate. The sentence distance is the mean over all ending keywords
/// (0 when the ending has none). Keywords missing from the table contribute
/// similarity 0 for their pairs.
pub fn knowledge_distance(
    body: &[String; 4],
    ending: &str,
    table: &EmbeddingTable,
) -> DistanceVector {
    let ending_keywords = extract_keywords(ending);
    let ending_stems: Vec<String> = ending_keywords.iter().map(|w| stem(w)).collect();
    let ending_vectors: Vec<Option<&[f64]>> =
        ending_keywords.iter().map(|w| table.get(w)).collect();

    let mut distances = [0.0; 4];
    for (j, sentence) in body.iter().enumerate() {
        let body_keywords = extract_keywords(sentence);
        let body_stems: Vec<String> = body_keywords.iter().map(|w| stem(w)).collect();
        let body_vectors: Vec<Option<&[f64]>> =
            body_keywords.iter().map(|w| table.get(w)).collect();

        let mut distance = 0.0;
        let mut num = 0usize;
        for (wi, w_stem) in ending_stems.iter().enumerate() {
            let mut max_d = 0.0;
            num += 1;
            for (ui, u_stem) in body_stems.iter().enumerate() {
                if w_stem != u_stem {
                    let d = match (ending_vectors[wi], body_vectors[ui]) {
                        (Some(a), Some(b)) => {
                            cosine_similarity(a, b).expect("equal dims within one table").value
                        }
                        _ => 0.0,
                    };
                    if d > max_d {
                        max_d = d;
                    }
                }
            }
            distance += max_d;
        }
        distances[j] = if num == 0 { 0.0 } else { distance / num as f64 };
    }
    DistanceVector(distances)
}

/// Linear head scoring a distance vector: w·D + b.
pub struct KnowledgeHead {
    pub weight: Tensor, // [1×4]
    pub bias: Tensor,   // [1×1]
}

impl KnowledgeHead {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        KnowledgeHead {
            weight: init_normal(&[1, 4], rng),
            bias: init_zeros(&[1, 1]),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("knowledge.weight".to_string(), self.weight.clone()),
            ("knowledge.bias".to_string(), self.bias.clone()),
        ]
    }

    /// Score one candidate's distance vector as a [1×1] tensor.
    pub fn score(&self, g: &mut Graph, d: &DistanceVector) -> Result<Tensor> {
        let dv = Tensor::constant(&[1, 4], d.0.to_vec())?;
        let s = g.matmul_nt(&dv, &self.weight)?;
        g.add(&s, &self.bias)
    }
}
