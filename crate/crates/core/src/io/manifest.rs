//! Tab-separated sample manifests.
//!
//! One record per line: `id<TAB>audio_path<TAB>label<TAB>transcript`, then
//! optionally `pos=<tags>` and `lld=<row id>`. Audio paths are relative to
//! the manifest's directory. Blank lines are skipped.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::LabelMap;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    /// The label as written in the manifest.
    pub label: String,
    /// Merged class index.
    pub class: usize,
    pub transcript: String,
    /// Pre-computed space-separated POS tags.
    pub pos: Option<String>,
    /// Row id in the external LLD table.
    pub lld: Option<String>,
    /// 1-based line number in the manifest.
    pub line: usize,
}

pub fn load_manifest(path: &Path, labels: &LabelMap) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(path, &text, base, labels, true)
}

/// Parses manifest text. With `check_files`, every audio path must exist.
pub fn parse_manifest(
    path: &Path,
    text: &str,
    base: &Path,
    labels: &LabelMap,
    check_files: bool,
) -> Result<Vec<ManifestEntry>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() < 4 {
            return Err(err(
                line,
                format!(
                    "expected id, audio, label and transcript, found {} field(s)",
                    fields.len()
                ),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(err(line, "empty sample id".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(err(line, format!("duplicate sample id `{id}`")));
        }
        let audio = base.join(fields[1].trim());
        if check_files && !audio.is_file() {
            return Err(err(line, format!("audio file {} not found", audio.display())));
        }
        let class = labels
            .map(fields[2])
            .map_err(|_| err(line, format!("label `{}` is not one of the five classes", fields[2])))?;
        let (mut pos, mut lld) = (None, None);
        for extra in &fields[4..] {
            if let Some(v) = extra.strip_prefix("pos=") {
                pos = Some(v.to_string());
            } else if let Some(v) = extra.strip_prefix("lld=") {
                lld = Some(v.trim().to_string());
            } else {
                return Err(err(line, format!("unknown field `{extra}` (expected pos= or lld=)")));
            }
        }
        out.push(ManifestEntry {
            id: id.to_string(),
            audio,
            label: fields[2].to_string(),
            class,
            transcript: fields[3].to_string(),
            pos,
            lld,
            line,
        });
    }
    Ok(out)
}

/// Serializes entries back to manifest lines, audio paths relative to `base`
/// when possible.
pub fn write_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    let mut out = String::new();
    for e in entries {
        let audio = e.audio.strip_prefix(base).unwrap_or(&e.audio);
        out.push_str(&format!("{}\t{}\t{}\t{}", e.id, audio.display(), e.label, e.transcript));
        if let Some(p) = &e.pos {
            out.push_str(&format!("\tpos={p}"));
        }
        if let Some(l) = &e.lld {
            out.push_str(&format!("\tlld={l}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ManifestEntry>> {
        parse_manifest(
            Path::new("m.tsv"),
            text,
            Path::new("/data"),
            &LabelMap::default(),
            false,
        )
    }

    #[test]
    fn three_valid_lines() {
        let m = parse(
            "a\ta.wav\tangry\tI am mad\nb\tsub/b.wav\texcited\tyay\tpos=INTJ\nc\tc.wav\tneu\tok then\tlld=row7\n",
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[1].class, 1);
        assert_eq!(m[1].audio, Path::new("/data/sub/b.wav"));
        assert_eq!(m[1].pos.as_deref(), Some("INTJ"));
        assert_eq!(m[2].lld.as_deref(), Some("row7"));
        assert_eq!(m[2].line, 3);
    }

    #[test]
    fn duplicate_id_cites_its_line() {
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!("s{i}\tx.wav\tsad\tword\n"));
        }
        text.push_str("s2\tx.wav\tsad\tword\n");
        match parse(&text) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 7);
                assert!(msg.contains("s2"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_label_and_short_lines() {
        assert!(matches!(
            parse("a\tx.wav\tdisgust\tugh\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(parse("\na\tx.wav\tsad\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse("a\tx.wav\tsad\thi\tfoo=1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_audio_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "a\tnope.wav\tsad\thi\n").unwrap();
        match load_manifest(&path, &LabelMap::default()) {
            Err(Error::Parse { line: 1, msg, .. }) => assert!(msg.contains("not found")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let text = "a\ta.wav\tangry\tI am mad\tpos=PRON VERB ADJ\tlld=r1\n";
        let m = parse(text).unwrap();
        assert_eq!(write_manifest(&m, Path::new("/data")), text);
    }
}
