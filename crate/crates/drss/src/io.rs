//! Text file formats: GloVe-style embeddings, pair datasets, knowledge bases
//! and stopword lists.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use drss_core::data::{Domain, EmbeddingTable, TextPair};
use drss_core::retrieval::KbEntry;
use log::warn;

use crate::error::{DrssError, Result};

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = fs::File::open(path).map_err(|e| DrssError::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(move |(i, l)| (i + 1, l.map_err(|e| DrssError::io(path, e)))))
}

/// Reads `token v1 … vl` lines. Blank lines are skipped; a line with the
/// wrong number of values or an unparsable value is an error naming the line.
pub fn load_embeddings(path: &Path, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(DrssError::Usage("embedding dimension must be >= 1".into()));
    }
    let mut entries = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(DrssError::parse(path, n, format!("token `{token}` has {} values, expected {dim}", values.len())));
        }
        let vec = values
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| DrssError::parse(path, n, format!("token `{token}` has a non-numeric or non-finite value")))?;
        entries.push((token.to_lowercase(), vec));
    }
    if entries.is_empty() {
        warn!("{}: no embedding vectors; every token gets a random vector", path.display());
    }
    Ok(EmbeddingTable::from_pretrained(entries, dim, seed)?)
}

/// Reads `query_id<TAB>s1<TAB>s2<TAB>label<TAB>domain` rows. An empty
/// `query_id` is stored as `None`.
pub fn read_pairs(path: &Path) -> Result<Vec<TextPair>> {
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(DrssError::parse(path, n, format!("expected 5 tab-separated columns, found {}", cols.len())));
        }
        let label = cols[3].trim().parse::<usize>().map_err(|_| DrssError::parse(path, n, format!("label `{}` is not a class id", cols[3])))?;
        let domain = cols[4].parse::<Domain>().map_err(|e| DrssError::parse(path, n, e.to_string()))?;
        if cols[1].trim().is_empty() || cols[2].trim().is_empty() {
            return Err(DrssError::parse(path, n, "empty sentence"));
        }
        let qid = cols[0].trim();
        out.push(TextPair {
            query_id: (!qid.is_empty()).then(|| qid.to_string()),
            s1: cols[1].to_string(),
            s2: cols[2].to_string(),
            label,
            domain,
        });
    }
    Ok(out)
}

pub(crate) fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        DrssError::io(path, e)
    })
}

pub fn write_pairs(path: &Path, pairs: &[TextPair]) -> Result<()> {
    for p in pairs {
        if [&p.s1, &p.s2].iter().any(|s| s.contains(['\t', '\n'])) {
            return Err(DrssError::Data(format!("sentence contains a tab or newline: `{}`", p.s1)));
        }
    }
    write_atomic(path, |w| {
        for p in pairs {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", p.query_id.as_deref().unwrap_or(""), p.s1, p.s2, p.label, p.domain)?;
        }
        Ok(())
    })
}

/// Reads `id<TAB>question<TAB>answer` rows.
pub fn read_kb(path: &Path) -> Result<Vec<KbEntry>> {
    let mut out = Vec::new();
    for (n, line) in lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, '\t').collect();
        if cols.len() != 3 {
            return Err(DrssError::parse(path, n, "expected `id<TAB>question<TAB>answer`"));
        }
        if cols[0].trim().is_empty() || cols[1].trim().is_empty() {
            return Err(DrssError::parse(path, n, "empty id or question"));
        }
        out.push(KbEntry { id: cols[0].trim().to_string(), question: cols[1].to_string(), answer: cols[2].to_string() });
    }
    Ok(out)
}

/// One stopword per line (lowercased); `#` starts a comment line.
pub fn read_stopwords(path: &Path) -> Result<std::collections::BTreeSet<String>> {
    let mut out = std::collections::BTreeSet::new();
    for (_, line) in lines(path)? {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.insert(t.to_lowercase());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use drss_core::data::{PAD, UNK};

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_line_embedding_file() {
        let f = file("a 1 0\nb 0 1\n");
        let t = load_embeddings(f.path(), 2, 0).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.vector(t.vocab.id("a")), &[1.0, 0.0]);
        assert_eq!(t.vector(PAD), &[0.0, 0.0]);
        assert_eq!(t.vocab.id("zzz"), UNK);
    }

    #[test]
    fn empty_embedding_file() {
        let f = file("");
        assert_eq!(load_embeddings(f.path(), 3, 0).unwrap().len(), 2);
    }

    #[test]
    fn malformed_line_names_the_line() {
        let f = file("a 1 0\nc 1\n");
        let err = load_embeddings(f.path(), 2, 0).unwrap_err();
        assert!(matches!(err, DrssError::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn pairs_round_trip() {
        let pairs = vec![
            TextPair { query_id: Some("q1".into()), s1: "a b".into(), s2: "b".into(), label: 1, domain: Domain::Source },
            TextPair { query_id: None, s1: "c".into(), s2: "d e".into(), label: 0, domain: Domain::Target },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.tsv");
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), pairs);
        let bad = file("q\ta\tb\tx\tsource\n");
        assert!(matches!(read_pairs(bad.path()), Err(DrssError::Parse { line: 1, .. })));
    }

    #[test]
    fn kb_rows() {
        let f = file("1\thow do i pay\tuse the app\n\n2\twhere is it\there\n");
        let kb = read_kb(f.path()).unwrap();
        assert_eq!(kb.len(), 2);
        assert_eq!(kb[1].answer, "here");
    }
}
