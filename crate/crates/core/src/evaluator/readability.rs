//! Flesch Reading Ease and Flesch-Kincaid grade with a fixed syllable
//! heuristic: count vowel groups (y counts as a vowel), drop a final silent
//! `e` unless the word ends in consonant + `le`, and never go below one.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
}

impl TextStats {
    pub fn reading_ease(&self) -> f64 {
        206.835 - 1.015 * self.words_per_sentence() - 84.6 * self.syllables_per_word()
    }

    pub fn grade(&self) -> f64 {
        0.39 * self.words_per_sentence() + 11.8 * self.syllables_per_word() - 15.59
    }

    fn words_per_sentence(&self) -> f64 {
        self.words as f64 / self.sentences.max(1) as f64
    }

    fn syllables_per_word(&self) -> f64 {
        self.syllables as f64 / self.words.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityReport {
    /// Non-blank responses averaged over.
    pub n: usize,
    pub avg_words: f64,
    pub flesch_reading_ease: f64,
    pub flesch_kincaid_grade: f64,
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

pub fn syllables(word: &str) -> usize {
    let w: Vec<char> = word.chars().filter(char::is_ascii_alphabetic).map(|c| c.to_ascii_lowercase()).collect();
    if w.is_empty() {
        return 1;
    }
    let mut groups = 0;
    let mut prev = false;
    for &c in &w {
        let v = is_vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = w.len();
    let consonant_le = n >= 3 && w[n - 2] == 'l' && !is_vowel(w[n - 3]);
    if n >= 2 && w[n - 1] == 'e' && !is_vowel(w[n - 2]) && !consonant_le && groups > 1 {
        groups -= 1;
    }
    groups.max(1)
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Sentence ends are runs of `.`, `!` or `?` followed by whitespace or the
/// end of text, so decimals like 72.5 do not split.
fn sentences(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut content = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            if (j == chars.len() || chars[j].is_whitespace()) && content {
                count += 1;
                content = false;
            }
            i = j;
            continue;
        }
        if c.is_alphanumeric() {
            content = true;
        }
        i += 1;
    }
    count + usize::from(content)
}

pub fn text_stats(text: &str) -> TextStats {
    let w = words(text);
    TextStats {
        words: w.len(),
        sentences: sentences(text).max(1),
        syllables: w.iter().map(|x| syllables(x)).sum(),
    }
}

/// Per-response scores averaged over non-blank responses. `None` when every
/// response is blank.
pub fn readability<S: AsRef<str>>(responses: &[S]) -> Option<ReadabilityReport> {
    let stats: Vec<TextStats> = responses
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !words(t).is_empty())
        .map(text_stats)
        .collect();
    if stats.is_empty() {
        return None;
    }
    let n = stats.len() as f64;
    Some(ReadabilityReport {
        n: stats.len(),
        avg_words: stats.iter().map(|s| s.words as f64).sum::<f64>() / n,
        flesch_reading_ease: stats.iter().map(TextStats::reading_ease).sum::<f64>() / n,
        flesch_kincaid_grade: stats.iter().map(TextStats::grade).sum::<f64>() / n,
    })
}
