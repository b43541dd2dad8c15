//! Text normalization shared by every stage: case folding, confusable folding,
//! tokenization, and the title-casing rule for role/department fields.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Languages the engine accepts questions and record values in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Tr,
    Ru,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::En, Language::Tr, Language::Ru];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Tr => "tr",
            Language::Ru => "ru",
        }
    }

    pub fn parse(code: &str) -> Option<Language> {
        match code.trim().to_ascii_lowercase().as_str() {
            "en" | "eng" | "english" => Some(Language::En),
            "tr" | "tur" | "turkish" => Some(Language::Tr),
            "ru" | "rus" | "russian" => Some(Language::Ru),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Locale-independent simple case fold.
///
/// Default Unicode lowercasing turns `İ` into `i̇` (two scalars), which breaks
/// equality between Turkish spellings, so `İ` folds to plain `i`.
pub fn fold_case(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            'İ' => out.push('i'),
            '\u{0307}' => {} // combining dot above, left behind by other folds
            _ => out.extend(c.to_lowercase()),
        }
    }
    out
}

/// Lowercasing that follows Turkish rules when the text is known to be Turkish
/// (`I` → `ı`, `İ` → `i`); otherwise identical to [`fold_case`].
pub fn lowercase_for(s: &str, lang: Language) -> String {
    if lang != Language::Tr {
        return fold_case(s);
    }
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            'I' => out.push('ı'),
            'İ' => out.push('i'),
            _ => out.extend(c.to_lowercase()),
        }
    }
    out
}

/// Folds look-alike characters that show up from keyboard-layout and
/// encoding accidents. Applied after [`fold_case`].
pub fn fold_confusables(s: &str) -> String {
    s.chars()
        .filter(|c| *c != '\u{0307}')
        .map(|c| match c {
            'ı' => 'i',
            '\u{2019}' | '\u{2018}' | '`' => '\'',
            '\u{00A0}' => ' ',
            other => other,
        })
        .collect()
}

/// Repairs the common "UTF-8 decoded as Latin-1" corruption (`Ã¼` for `ü`).
/// Returns the input unchanged when it does not look like mojibake or the
/// repaired bytes are not valid UTF-8.
pub fn repair_mojibake(s: &str) -> String {
    if !s.chars().any(|c| matches!(c, 'Ã' | 'Ä' | 'Å' | 'Ð' | 'Ñ')) {
        return s.to_string();
    }
    let mut bytes = Vec::with_capacity(s.len());
    for c in s.chars() {
        let cp = c as u32;
        if cp > 0xFF {
            return s.to_string();
        }
        bytes.push(cp as u8);
    }
    match String::from_utf8(bytes) {
        Ok(fixed) => fixed,
        Err(_) => s.to_string(),
    }
}

/// Collapses runs of whitespace into single spaces and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lookup key used for every case-insensitive dictionary in the crate.
pub fn lookup_key(s: &str) -> String {
    collapse_whitespace(&fold_case(s))
}

/// Splits on anything that is not a letter or digit.
pub fn word_tokens(s: &str) -> Vec<&str> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Splits an SQL identifier on underscores and lower→upper camel-case
/// boundaries, then folds each part: `egitimOkulAdi` → `[egitim, okul, adi]`.
pub fn identifier_tokens(ident: &str) -> Vec<String> {
    let mut parts = Vec::new();
    for chunk in ident.split(|c: char| !c.is_alphanumeric()) {
        let mut current = String::new();
        let mut prev_lower = false;
        for c in chunk.chars() {
            if c.is_uppercase() && prev_lower && !current.is_empty() {
                parts.push(fold_case(&current));
                current.clear();
            }
            prev_lower = c.is_lowercase() || c.is_ascii_digit();
            current.push(c);
        }
        if !current.is_empty() {
            parts.push(fold_case(&current));
        }
    }
    parts
}

fn upper_first(c: char) -> String {
    match c {
        'i' => "I".to_string(),
        other => other.to_uppercase().collect(),
    }
}

/// Capitalizes each whitespace-separated token and lowercases the rest of it,
/// keeping all-caps acronyms of at most four letters intact (`GPP`).
pub fn title_case(s: &str) -> String {
    collapse_whitespace(s)
        .split(' ')
        .map(title_case_token)
        .collect::<Vec<_>>()
        .join(" ")
}

fn title_case_token(token: &str) -> String {
    let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
    let is_acronym = !letters.is_empty()
        && letters.len() <= 4
        && letters.len() >= 2
        && letters.iter().all(|c| c.is_uppercase());
    if is_acronym {
        return token.to_string();
    }
    let mut out = String::with_capacity(token.len());
    let mut at_word_start = true;
    for c in token.chars() {
        if c.is_alphabetic() {
            if at_word_start {
                out.push_str(&upper_first(c));
            } else {
                out.push_str(&fold_case(&c.to_string()));
            }
            at_word_start = false;
        } else {
            out.push(c);
            // "human-resources" → "Human-Resources"
            at_word_start = c == '-' || c == '/' || c == '(';
        }
    }
    out
}

/// Re-applies the capitalization pattern of `template` to `word`: all caps,
/// leading capital, or lowercase.
pub fn match_case(template: &str, word: &str) -> String {
    let letters: Vec<char> = template.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return word.chars().flat_map(|c| c.to_uppercase()).collect();
    }
    if letters.first().is_some_and(|c| c.is_uppercase()) {
        let mut chars = word.chars();
        return match chars.next() {
            Some(first) => upper_first(first) + chars.as_str(),
            None => String::new(),
        };
    }
    word.to_string()
}

/// Fraction of alphabetic characters that are ASCII; 1.0 for text without letters.
pub fn ascii_alpha_ratio(s: &str) -> f64 {
    let (ascii, total) = s
        .chars()
        .filter(|c| c.is_alphabetic())
        .fold((0usize, 0usize), |(a, t), c| {
            (a + usize::from(c.is_ascii()), t + 1)
        });
    if total == 0 {
        1.0
    } else {
        ascii as f64 / total as f64
    }
}

pub fn is_cyrillic(c: char) -> bool {
    matches!(c, '\u{0400}'..='\u{04FF}')
}

/// Characters that only occur in Turkish among the supported languages.
pub fn is_turkish_letter(c: char) -> bool {
    matches!(
        c,
        'ç' | 'Ç' | 'ğ' | 'Ğ' | 'ı' | 'İ' | 'ö' | 'Ö' | 'ş' | 'Ş' | 'ü' | 'Ü'
    )
}

/// 64-bit FNV-1a. Stable across platforms and releases, which matters for
/// persisted embeddings and minhash signatures.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turkish_capital_dotted_i_folds_to_plain_i() {
        assert_eq!(fold_case("İnsan"), "insan");
        assert_eq!(fold_case("İSTANBUL"), "istanbul");
        assert_eq!(fold_case("ODTÜ"), "odtü");
    }

    #[test]
    fn turkish_locale_lowercase() {
        assert_eq!(lowercase_for("KIRMIZI", Language::Tr), "kırmızı");
        assert_eq!(lowercase_for("KIRMIZI", Language::En), "kirmizi");
    }

    #[test]
    fn confusables() {
        assert_eq!(fold_confusables(&fold_case("hıghschool")), "highschool");
    }

    #[test]
    fn mojibake_repair() {
        assert_eq!(repair_mojibake("MÃ¼hendis"), "Mühendis");
        assert_eq!(repair_mojibake("Moscow"), "Moscow");
    }

    #[test]
    fn title_casing_rule() {
        assert_eq!(title_case("civil engineer"), "Civil Engineer");
        assert_eq!(title_case("GPP"), "GPP");
        assert_eq!(title_case("CIVIL ENGINEER"), "Civil Engineer");
        assert_eq!(title_case("  human   resources "), "Human Resources");
        assert_eq!(title_case("konya high school"), "Konya High School");
        assert_eq!(title_case("istanbul"), "Istanbul");
    }

    #[test]
    fn identifier_splitting() {
        assert_eq!(
            identifier_tokens("egitimOkulAdi"),
            vec!["egitim", "okul", "adi"]
        );
        assert_eq!(identifier_tokens("is_payroll"), vec!["is", "payroll"]);
        assert_eq!(identifier_tokens("SALARY_AMOUNT"), vec!["salary", "amount"]);
    }

    #[test]
    fn case_template() {
        assert_eq!(match_case("Enginer", "engineer"), "Engineer");
        assert_eq!(match_case("ENGINER", "engineer"), "ENGINEER");
        assert_eq!(match_case("enginer", "engineer"), "engineer");
    }
}
