//! Small shared helpers.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hex-encoded SHA-256 of a file's contents.
pub fn sha256_file(path: &std::path::Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Lowercase a string and split it into alphanumeric runs. Shared by the
/// model tokenizer and the lexicon counter so both see identical tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_lowercases_and_drops_punctuation() {
        assert_eq!(split_tokens("Er, hmm... UMM!"), vec!["er", "hmm", "umm"]);
        assert_eq!(split_tokens(""), Vec::<String>::new());
        assert_eq!(split_tokens("don't"), vec!["don", "t"]);
    }
}
