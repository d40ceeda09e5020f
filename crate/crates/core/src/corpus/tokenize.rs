/// Rule-based tokenizer shared by every channel.
///
/// Rules, in order, over the lowercased input:
/// - a maximal run of alphanumeric characters is one token;
/// - an ASCII apostrophe immediately followed by alphanumerics starts a
///   contraction token that includes the apostrophe ("dan's" → `dan`, `'s`);
/// - any other non-whitespace character is a single-character token.
///
/// The output is stable under re-tokenizing its own space-joined form.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let lower = sentence.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c == '\'' && i + 1 < chars.len() && chars[i + 1].is_alphanumeric() {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

/// True if the token contains at least one alphanumeric character.
pub fn is_word_token(token: &str) -> bool {
    token.chars().any(|c| c.is_alphanumeric())
}
