use crate::error::{Error, Result};

use super::tokenize::tokenize;
use super::vocab::{TokenSequence, Vocabulary, CLF, DELIM, START};
use super::Story;

fn push_tokens(ids: &mut Vec<usize>, sentence: &str, vocab: &Vocabulary) {
    for token in tokenize(sentence) {
        ids.push(vocab.id(&token));
    }
}

/// Keep the last `window` ids. The classification marker is the final token,
/// so truncation drops from the front.
fn truncate_front(mut ids: Vec<usize>, window: usize) -> Vec<usize> {
    if ids.len() > window {
        ids.drain(..ids.len() - window);
    }
    ids
}

/// Serialize body and one candidate ending as a single sequence:
/// `<start>` body `<delim>` ending `<clf>`.
pub fn encode_full_story(
    story: &Story,
    ending_index: usize,
    vocab: &Vocabulary,
    window: usize,
) -> Result<TokenSequence> {
    let endings = story.endings();
    if ending_index >= endings.len() {
        return Err(Error::contract(format!(
            "ending index {ending_index} out of range for story {}",
            story.id
        )));
    }
    let mut ids = vec![START];
    for sentence in &story.body {
        push_tokens(&mut ids, sentence, vocab);
    }
    ids.push(DELIM);
    push_tokens(&mut ids, &endings[ending_index], vocab);
    ids.push(CLF);
    Ok(TokenSequence::new(truncate_front(ids, window)))
}

/// Serialize body and ending as two sequences, each wrapped in its own
/// `<start>`/`<clf>` markers.
pub fn encode_plot_end(
    story: &Story,
    ending_index: usize,
    vocab: &Vocabulary,
    window: usize,
) -> Result<(TokenSequence, TokenSequence)> {
    let endings = story.endings();
    if ending_index >= endings.len() {
        return Err(Error::contract(format!(
            "ending index {ending_index} out of range for story {}",
            story.id
        )));
    }
    let mut body = vec![START];
    for sentence in &story.body {
        push_tokens(&mut body, sentence, vocab);
    }
    body.push(CLF);
    let ending = encode_sentence(&endings[ending_index], vocab, window);
    Ok((TokenSequence::new(truncate_front(body, window)), ending))
}

/// One sentence as `<start>` tokens `<clf>`.
pub fn encode_sentence(sentence: &str, vocab: &Vocabulary, window: usize) -> TokenSequence {
    let mut ids = vec![START];
    push_tokens(&mut ids, sentence, vocab);
    ids.push(CLF);
    TokenSequence::new(truncate_front(ids, window))
}
