//! Text normalization helpers shared by matching, reranking, and ROUGE.

/// Casefold, strip punctuation, split on whitespace.
///
/// Any character that is not alphanumeric is treated as a separator, so
/// hyphenated tokens split and trailing punctuation disappears.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Normalize free text for exact answer comparison: casefold, trim, collapse
/// internal whitespace, strip terminal punctuation.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_string()
}

/// Jaccard overlap of token sets, in [0, 1]. Empty-vs-empty is 0.
pub fn token_jaccard(a: &str, b: &str) -> f32 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    if sa.is_empty() || sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f32 / union as f32
}
