//! Coarse part-of-speech tags and a lexicon-plus-suffix tagger.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The twelve universal coarse tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Adj,
    Adp,
    Adv,
    Conj,
    Det,
    Noun,
    Num,
    Prt,
    Pron,
    Verb,
    Punct,
    X,
}

impl Tag {
    pub const ALL: [Tag; 12] = [
        Tag::Adj,
        Tag::Adp,
        Tag::Adv,
        Tag::Conj,
        Tag::Det,
        Tag::Noun,
        Tag::Num,
        Tag::Prt,
        Tag::Pron,
        Tag::Verb,
        Tag::Punct,
        Tag::X,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::Adj => "ADJ",
            Tag::Adp => "ADP",
            Tag::Adv => "ADV",
            Tag::Conj => "CONJ",
            Tag::Det => "DET",
            Tag::Noun => "NOUN",
            Tag::Num => "NUM",
            Tag::Prt => "PRT",
            Tag::Pron => "PRON",
            Tag::Verb => "VERB",
            Tag::Punct => ".",
            Tag::X => "X",
        }
    }

    /// Maps a Penn Treebank tag onto the coarse set.
    pub fn from_penn(tag: &str) -> Option<Tag> {
        let t = match tag {
            "JJ" | "JJR" | "JJS" => Tag::Adj,
            "IN" => Tag::Adp,
            "RB" | "RBR" | "RBS" | "WRB" => Tag::Adv,
            "CC" => Tag::Conj,
            "DT" | "PDT" | "WDT" | "EX" => Tag::Det,
            "NN" | "NNS" | "NNP" | "NNPS" => Tag::Noun,
            "CD" => Tag::Num,
            "RP" | "POS" | "TO" => Tag::Prt,
            "PRP" | "PRP$" | "WP" | "WP$" => Tag::Pron,
            "VB" | "VBD" | "VBG" | "VBN" | "VBP" | "VBZ" | "MD" => Tag::Verb,
            "." | "," | ":" | "``" | "''" | "-LRB-" | "-RRB-" | "#" | "$" => Tag::Punct,
            "FW" | "LS" | "SYM" | "UH" => Tag::X,
            _ => return None,
        };
        Some(t)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tag {
    type Err = Error;

    /// Accepts coarse names (any case) or Penn Treebank tags.
    fn from_str(s: &str) -> Result<Tag> {
        let upper = s.to_ascii_uppercase();
        Tag::ALL
            .iter()
            .copied()
            .find(|t| t.name() == upper)
            .or_else(|| Tag::from_penn(&upper))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown POS tag `{s}`")))
    }
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Vec<Tag>;
}

/// Closed-class lexicon lookup, then digits → NUM, then suffix rules, then
/// NOUN.
#[derive(Clone, Copy, Debug, Default)]
pub struct NaiveTagger;

const LEXICON: &[(&str, Tag)] = &[
    ("the", Tag::Det),
    ("a", Tag::Det),
    ("an", Tag::Det),
    ("this", Tag::Det),
    ("that", Tag::Det),
    ("these", Tag::Det),
    ("those", Tag::Det),
    ("every", Tag::Det),
    ("some", Tag::Det),
    ("any", Tag::Det),
    ("no", Tag::Det),
    ("all", Tag::Det),
    ("i", Tag::Pron),
    ("you", Tag::Pron),
    ("he", Tag::Pron),
    ("she", Tag::Pron),
    ("it", Tag::Pron),
    ("we", Tag::Pron),
    ("they", Tag::Pron),
    ("me", Tag::Pron),
    ("him", Tag::Pron),
    ("her", Tag::Pron),
    ("us", Tag::Pron),
    ("them", Tag::Pron),
    ("my", Tag::Pron),
    ("your", Tag::Pron),
    ("his", Tag::Pron),
    ("its", Tag::Pron),
    ("our", Tag::Pron),
    ("their", Tag::Pron),
    ("what", Tag::Pron),
    ("who", Tag::Pron),
    ("i'm", Tag::Pron),
    ("it's", Tag::Pron),
    ("you're", Tag::Pron),
    ("in", Tag::Adp),
    ("on", Tag::Adp),
    ("at", Tag::Adp),
    ("of", Tag::Adp),
    ("for", Tag::Adp),
    ("with", Tag::Adp),
    ("from", Tag::Adp),
    ("about", Tag::Adp),
    ("by", Tag::Adp),
    ("into", Tag::Adp),
    ("over", Tag::Adp),
    ("after", Tag::Adp),
    ("before", Tag::Adp),
    ("and", Tag::Conj),
    ("or", Tag::Conj),
    ("but", Tag::Conj),
    ("because", Tag::Conj),
    ("if", Tag::Conj),
    ("so", Tag::Conj),
    ("to", Tag::Prt),
    ("up", Tag::Prt),
    ("out", Tag::Prt),
    ("off", Tag::Prt),
    ("not", Tag::Adv),
    ("very", Tag::Adv),
    ("really", Tag::Adv),
    ("just", Tag::Adv),
    ("too", Tag::Adv),
    ("now", Tag::Adv),
    ("never", Tag::Adv),
    ("always", Tag::Adv),
    ("here", Tag::Adv),
    ("there", Tag::Adv),
    ("again", Tag::Adv),
    ("is", Tag::Verb),
    ("am", Tag::Verb),
    ("are", Tag::Verb),
    ("was", Tag::Verb),
    ("were", Tag::Verb),
    ("be", Tag::Verb),
    ("been", Tag::Verb),
    ("have", Tag::Verb),
    ("has", Tag::Verb),
    ("had", Tag::Verb),
    ("do", Tag::Verb),
    ("does", Tag::Verb),
    ("did", Tag::Verb),
    ("don't", Tag::Verb),
    ("can't", Tag::Verb),
    ("can", Tag::Verb),
    ("will", Tag::Verb),
    ("would", Tag::Verb),
    ("could", Tag::Verb),
    ("should", Tag::Verb),
    ("go", Tag::Verb),
    ("get", Tag::Verb),
    ("got", Tag::Verb),
    ("know", Tag::Verb),
    ("think", Tag::Verb),
    ("want", Tag::Verb),
    ("feel", Tag::Verb),
    ("love", Tag::Verb),
    ("hate", Tag::Verb),
    ("miss", Tag::Verb),
    ("said", Tag::Verb),
    ("good", Tag::Adj),
    ("bad", Tag::Adj),
    ("great", Tag::Adj),
    ("happy", Tag::Adj),
    ("sad", Tag::Adj),
    ("angry", Tag::Adj),
    ("fine", Tag::Adj),
    ("wonderful", Tag::Adj),
    ("terrible", Tag::Adj),
    ("awful", Tag::Adj),
    ("calm", Tag::Adj),
    ("tired", Tag::Adj),
    ("upset", Tag::Adj),
    ("lonely", Tag::Adj),
    ("furious", Tag::Adj),
    ("glad", Tag::Adj),
    ("okay", Tag::Adj),
    ("ok", Tag::Adj),
    ("yes", Tag::X),
    ("oh", Tag::X),
    ("well", Tag::X),
    ("yeah", Tag::X),
    ("ugh", Tag::X),
    ("wow", Tag::X),
];

impl NaiveTagger {
    pub fn tag_word(&self, w: &str) -> Tag {
        if let Some(&(_, t)) = LEXICON.iter().find(|(word, _)| *word == w) {
            return t;
        }
        if w.chars().any(|c| c.is_ascii_digit()) && w.chars().all(|c| c.is_ascii_digit() || c == '\'') {
            return Tag::Num;
        }
        if w.len() > 3 && w.ends_with("ly") {
            return Tag::Adv;
        }
        if (w.len() > 4 && w.ends_with("ing")) || (w.len() > 3 && w.ends_with("ed")) {
            return Tag::Verb;
        }
        Tag::Noun
    }
}

impl PosTagger for NaiveTagger {
    fn tag(&self, tokens: &[String]) -> Vec<Tag> {
        tokens.iter().map(|w| self.tag_word(w)).collect()
    }
}

/// Parses a space-separated pre-computed tag list and checks it against the
/// token count.
pub fn parse_tags(text: &str, token_count: usize) -> Result<Vec<Tag>> {
    let tags = text.split_whitespace().map(str::parse).collect::<Result<Vec<Tag>>>()?;
    if tags.len() != token_count {
        return Err(Error::InvalidArgument(format!(
            "{} POS tags for {token_count} tokens",
            tags.len()
        )));
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(w: &[&str]) -> Vec<String> {
        w.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn examples() {
        let t = NaiveTagger;
        assert_eq!(t.tag(&toks(&["quickly"])), vec![Tag::Adv]);
        assert_eq!(t.tag(&toks(&["the", "cat"])), vec![Tag::Det, Tag::Noun]);
        assert!(t.tag(&[]).is_empty());
        assert_eq!(
            t.tag(&toks(&["running", "walked", "42", "and"])),
            vec![Tag::Verb, Tag::Verb, Tag::Num, Tag::Conj]
        );
    }

    #[test]
    fn tagset_has_twelve_distinct_indices() {
        let idx: Vec<usize> = Tag::ALL.iter().map(|t| t.index()).collect();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn parses_coarse_and_penn() {
        assert_eq!("noun".parse::<Tag>().unwrap(), Tag::Noun);
        assert_eq!("VBD".parse::<Tag>().unwrap(), Tag::Verb);
        assert_eq!(".".parse::<Tag>().unwrap(), Tag::Punct);
        assert!("ZZZ".parse::<Tag>().is_err());
        assert_eq!(parse_tags("DET NN", 2).unwrap(), vec![Tag::Det, Tag::Noun]);
        assert!(parse_tags("DET", 2).is_err());
    }
}
