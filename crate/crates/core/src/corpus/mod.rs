//! Story data model, tokenization, vocabulary, dataset IO, and the token
//! serializations consumed by the narrative channel.

mod encode;
mod files;
mod tokenize;
mod vocab;

pub use encode::{encode_full_story, encode_plot_end, encode_sentence};
pub use files::{load_labeled, load_unlabeled, write_labeled, write_unlabeled};
pub use tokenize::{is_word_token, tokenize};
pub use vocab::{TokenSequence, Vocabulary, CLF, DELIM, PAD, RESERVED, START, UNK};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::substream;

/// One unit of classification: four body sentences plus either two candidate
/// endings and a gold label, or a single gold fifth sentence (unlabeled
/// training stories). The label is present exactly when there are two
/// candidates; construction enforces this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub id: String,
    pub body: [String; 4],
    endings: Vec<String>,
    label: Option<usize>,
    /// Generator tag carried by synthetic mixed datasets; absent otherwise.
    pub kind: Option<String>,
}

impl Story {
    pub fn labeled(
        id: impl Into<String>,
        body: [String; 4],
        endings: [String; 2],
        label: usize,
    ) -> Result<Self> {
        if label > 1 {
            return Err(Error::contract(format!("label must be 0 or 1, got {label}")));
        }
        Ok(Story {
            id: id.into(),
            body,
            endings: endings.into(),
            label: Some(label),
            kind: None,
        })
    }

    pub fn unlabeled(id: impl Into<String>, body: [String; 4], gold_ending: String) -> Self {
        Story {
            id: id.into(),
            body,
            endings: vec![gold_ending],
            label: None,
            kind: None,
        }
    }

    pub fn endings(&self) -> &[String] {
        &self.endings
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    /// The correct ending: the labeled candidate, or the single fifth
    /// sentence of an unlabeled story.
    pub fn gold_ending(&self) -> &str {
        match self.label {
            Some(i) => &self.endings[i],
            None => &self.endings[0],
        }
    }

    /// Body sentences followed by all endings.
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.body
            .iter()
            .map(String::as_str)
            .chain(self.endings.iter().map(String::as_str))
    }

    /// A copy with the two candidate endings swapped and the label flipped.
    pub fn swapped(&self) -> Result<Self> {
        if self.endings.len() != 2 {
            return Err(Error::contract("cannot swap endings of an unlabeled story"));
        }
        let mut out = self.clone();
        out.endings.swap(0, 1);
        out.label = self.label.map(|l| 1 - l);
        Ok(out)
    }
}

/// Deterministic train/validation split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction must be in (0,1), got {train_fraction}"
            )));
        }
        Ok(SplitSpec {
            train_fraction,
            seed,
        })
    }
}

/// Shuffle by the seeded split substream and cut at round(fraction·N).
/// The two halves are disjoint and exhaustive.
pub fn split(stories: &[Story], spec: SplitSpec) -> Result<(Vec<Story>, Vec<Story>)> {
    SplitSpec::new(spec.train_fraction, spec.seed)?;
    let mut indices: Vec<usize> = (0..stories.len()).collect();
    let mut rng = substream(spec.seed, "split");
    indices.shuffle(&mut rng);
    let n_train = (spec.train_fraction * stories.len() as f64).round() as usize;
    let train = indices[..n_train]
        .iter()
        .map(|&i| stories[i].clone())
        .collect();
    let validation = indices[n_train..]
        .iter()
        .map(|&i| stories[i].clone())
        .collect();
    Ok((train, validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn stories(n: usize) -> Vec<Story> {
        (0..n)
            .map(|i| {
                Story::labeled(
                    format!("s{i}"),
                    ["a".into(), "b".into(), "c".into(), "d".into()],
                    ["e".into(), "f".into()],
                    i % 2,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let all = stories(10);
        let (train, val) = split(&all, SplitSpec::new(0.8, 7).unwrap()).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        let ids: HashSet<&str> = train
            .iter()
            .chain(val.iter())
            .map(|s| s.id.as_str())
            .collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn same_seed_gives_identical_partition() {
        let all = stories(30);
        let spec = SplitSpec::new(0.8, 42).unwrap();
        let (t1, v1) = split(&all, spec).unwrap();
        let (t2, v2) = split(&all, spec).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn different_seeds_usually_differ() {
        let all = stories(30);
        let base = split(&all, SplitSpec::new(0.8, 0).unwrap()).unwrap().0;
        let mut differing = 0;
        for seed in 1..=20 {
            let other = split(&all, SplitSpec::new(0.8, seed).unwrap()).unwrap().0;
            if other != base {
                differing += 1;
            }
        }
        assert!(differing >= 19, "only {differing}/20 seeds changed the split");
    }

    #[test]
    fn label_is_present_iff_two_endings() {
        let labeled = stories(1).pop().unwrap();
        assert_eq!(labeled.endings().len(), 2);
        assert!(labeled.label().is_some());
        let unlabeled = Story::unlabeled(
            "u",
            ["a".into(), "b".into(), "c".into(), "d".into()],
            "gold".into(),
        );
        assert_eq!(unlabeled.endings().len(), 1);
        assert!(unlabeled.label().is_none());
        assert_eq!(unlabeled.gold_ending(), "gold");
    }

    #[test]
    fn swapping_flips_label_and_endings() {
        let s = stories(1).pop().unwrap();
        let swapped = s.swapped().unwrap();
        assert_eq!(swapped.endings()[0], s.endings()[1]);
        assert_eq!(swapped.label(), Some(1 - s.label().unwrap()));
    }

    #[test]
    fn bad_fraction_is_config_error() {
        assert!(SplitSpec::new(0.0, 1).is_err());
        assert!(SplitSpec::new(1.0, 1).is_err());
    }
}
