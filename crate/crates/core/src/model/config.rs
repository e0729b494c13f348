//! Model topology and branch subsets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Word,
    Pos,
    Mfsc,
    Lld,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::Word, Branch::Pos, Branch::Mfsc, Branch::Lld];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Word => "word",
            Branch::Pos => "pos",
            Branch::Mfsc => "mfsc",
            Branch::Lld => "lld",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown branch `{s}`")))
    }
}

/// Non-empty subset of the four branches. Written as `word+mfsc`, or `all`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BranchSet(u8);

impl BranchSet {
    pub const ALL: BranchSet = BranchSet(0b1111);

    pub fn new(branches: &[Branch]) -> Result<Self> {
        let bits = branches.iter().fold(0u8, |acc, b| acc | b.bit());
        if bits == 0 {
            return Err(Error::InvalidArgument("at least one branch must be active".into()));
        }
        Ok(BranchSet(bits))
    }

    pub fn single(b: Branch) -> Self {
        BranchSet(b.bit())
    }

    /// All 15 non-empty subsets.
    pub fn all_subsets() -> Vec<BranchSet> {
        (1u8..16).map(BranchSet).collect()
    }

    pub fn contains(self, b: Branch) -> bool {
        self.0 & b.bit() != 0
    }

    /// Active branches in canonical order (word, pos, mfsc, lld).
    pub fn iter(self) -> impl Iterator<Item = Branch> {
        Branch::ALL.into_iter().filter(move |b| self.contains(*b))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn id(self) -> u64 {
        u64::from(self.0)
    }
}

impl fmt::Display for BranchSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == BranchSet::ALL {
            return f.write_str("all");
        }
        let names: Vec<&str> = self.iter().map(Branch::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for BranchSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(BranchSet::ALL);
        }
        let branches = s.split('+').map(str::parse).collect::<Result<Vec<Branch>>>()?;
        BranchSet::new(&branches)
    }
}

impl Serialize for BranchSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BranchSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dropout rate per layer group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutConfig {
    pub text: f64,
    pub mfsc_conv: f64,
    pub mfsc_dense: f64,
    pub lld: f64,
    pub fusion: f64,
}

impl DropoutConfig {
    pub fn uniform(rate: f64) -> Self {
        Self {
            text: rate,
            mfsc_conv: rate,
            mfsc_dense: rate,
            lld: rate,
            fusion: rate,
        }
    }

    fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("dropout.text", self.text),
            ("dropout.mfsc_conv", self.mfsc_conv),
            ("dropout.mfsc_dense", self.mfsc_dense),
            ("dropout.lld", self.lld),
            ("dropout.fusion", self.fusion),
        ]
    }
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self::uniform(0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub branches: BranchSet,
    /// Width multiplier; 1.0 is the full-size network.
    pub scale: f64,
    pub dropout: DropoutConfig,
    pub lld_dim: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub num_classes: usize,
    pub fine_tune_words: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Standard deviation of the classifier-head weights.
    pub head_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            branches: BranchSet::ALL,
            scale: 1.0,
            dropout: DropoutConfig::default(),
            lld_dim: crate::audio::LLD_DIM,
            word_dim: 300,
            pos_dim: 10,
            num_classes: crate::NUM_CLASSES,
            fine_tune_words: false,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            head_init_std: 0.01,
        }
    }
}

pub const SENTENCE_LEN: usize = crate::text::MAX_LEN;
pub const FILTER_WIDTHS: [usize; 4] = [2, 3, 4, 5];
pub const MFSC_FRAMES: usize = 64;
pub const MFSC_BANDS: usize = 64;
pub const MFSC_PLANES: usize = 3;

impl ModelConfig {
    /// `max(1, round(w · scale))`.
    pub fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.scale).round() as usize).max(1)
    }

    /// Filters per text-CNN width (256 at full scale).
    pub fn text_filters(&self) -> usize {
        self.scaled(256)
    }

    /// Width of every branch output (1024 at full scale).
    pub fn branch_width(&self) -> usize {
        4 * self.text_filters()
    }

    /// Channels of the four MFSC conv blocks (32, 64, 128, 256 at full scale).
    pub fn mfsc_channels(&self) -> [usize; 4] {
        [self.scaled(32), self.scaled(64), self.scaled(128), self.scaled(256)]
    }

    /// Flattened conv-stack output per segment, equal to the FC width
    /// (4·4·256 = 4096 at full scale).
    pub fn mfsc_flat(&self) -> usize {
        let spatial = MFSC_FRAMES >> 4;
        spatial * (MFSC_BANDS >> 4) * self.mfsc_channels()[3]
    }

    /// First hidden width of the LLD and fusion networks (2048 at full scale).
    pub fn wide_hidden(&self) -> usize {
        self.scaled(2048)
    }

    pub fn fusion_input(&self) -> usize {
        self.branch_width() * self.branches.len()
    }

    pub fn with_branches(&self, branches: BranchSet) -> Self {
        Self {
            branches,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::config(
                "scale",
                format!("must lie in (0, 1], got {}", self.scale),
            ));
        }
        for (key, rate) in self.dropout.entries() {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {rate}")));
            }
        }
        if self.lld_dim == 0 {
            return Err(Error::config("lld_dim", "must be positive"));
        }
        if self.word_dim == 0 {
            return Err(Error::config("word_dim", "must be positive"));
        }
        if self.pos_dim == 0 {
            return Err(Error::config("pos_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::config("bn_eps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_momentum", "must lie in [0, 1)"));
        }
        if !(self.head_init_std > 0.0) {
            return Err(Error::config("head_init_std", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_set_round_trips_through_text() {
        for s in BranchSet::all_subsets() {
            assert_eq!(s.to_string().parse::<BranchSet>().unwrap(), s);
        }
        assert_eq!("all".parse::<BranchSet>().unwrap().len(), 4);
        assert_eq!("mfsc+word".parse::<BranchSet>().unwrap().to_string(), "word+mfsc");
        assert!("word+audio".parse::<BranchSet>().is_err());
        assert!(BranchSet::new(&[]).is_err());
        assert_eq!(BranchSet::all_subsets().len(), 15);
    }

    #[test]
    fn widths_at_full_and_eighth_scale() {
        let full = ModelConfig::default();
        assert_eq!(full.branch_width(), 1024);
        assert_eq!(full.mfsc_flat(), 4096);
        assert_eq!(full.wide_hidden(), 2048);
        assert_eq!(full.fusion_input(), 4096);
        let eighth = ModelConfig {
            scale: 0.125,
            ..ModelConfig::default()
        };
        assert_eq!(eighth.branch_width(), 128);
        assert_eq!(eighth.mfsc_flat(), 512);
        assert_eq!(eighth.mfsc_channels(), [4, 8, 16, 32]);
    }

    #[test]
    fn validation_names_keys() {
        let bad = ModelConfig {
            dropout: DropoutConfig {
                lld: 1.0,
                ..DropoutConfig::default()
            },
            ..ModelConfig::default()
        };
        match bad.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "dropout.lld"),
            other => panic!("{other:?}"),
        }
        let tiny = ModelConfig {
            scale: 0.0,
            ..ModelConfig::default()
        };
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn serde_round_trip() {
        let c = ModelConfig {
            branches: "word+lld".parse().unwrap(),
            ..ModelConfig::default()
        };
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&j).unwrap(), c);
    }
}
