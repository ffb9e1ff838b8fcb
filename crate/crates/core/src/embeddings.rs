//! Pre-trained concept vectors and anchor-similarity feature selection.
//!
//! Table file format: one concept per line, tab separated,
//! `concept_id<TAB>v1<TAB>...<TAB>v_d`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::datamodel::ConceptId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<ConceptId, Vec<f64>>,
}

impl EmbeddingTable {
    /// Builds a table; on duplicate ids the last row wins.
    pub fn from_rows(dim: usize, rows: Vec<(ConceptId, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        let mut entries = BTreeMap::new();
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::Validation(format!(
                    "vector for {id} has {} entries, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("vector for {id} is not finite")));
            }
            if norm(&v) == 0.0 {
                return Err(Error::Validation(format!("vector for {id} has zero norm")));
            }
            if entries.insert(id.clone(), v).is_some() {
                log::warn!("duplicate embedding row for {id}; keeping the last one");
            }
        }
        Ok(EmbeddingTable { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &ConceptId) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ConceptId, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }
}

pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim = None;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let id = ConceptId::new(id).map_err(|e| Error::Parse {
            line: row,
            message: e.to_string(),
        })?;
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: row,
                message: format!("non-numeric value for {id}: {e}"),
            })?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(Error::Parse {
                line: row,
                message: format!(
                    "ragged row for {id}: {} values, expected {expected}",
                    values.len()
                ),
            });
        }
        rows.push((id, values));
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        line: 0,
        message: "embedding table is empty".into(),
    })?;
    EmbeddingTable::from_rows(dim, rows)
}

pub fn save_embedding_table(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, v) in table.iter() {
        write!(w, "{id}").map_err(|e| Error::io(path, e))?;
        for x in v {
            write!(w, "\t{x}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine_similarity",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Unique concepts with cumulative counts over a selected time range.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregatedConcepts {
    pub pairs: Vec<(ConceptId, u64)>,
}

impl AggregatedConcepts {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.pairs.iter().any(|(c, _)| c == id)
    }
}

/// Ranking used by selection: similarity descending, then id ascending.
fn rank_order(a: &(f64, &ConceptId), b: &(f64, &ConceptId)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Keeps the `k_star` concepts most similar to the anchor, forcing the anchor
/// in when the patient has it. Concepts without a vector are skipped.
pub fn select_features(
    agg: &AggregatedConcepts,
    table: &EmbeddingTable,
    anchor: &ConceptId,
    k_star: usize,
) -> Result<AggregatedConcepts> {
    let anchor_vec = table
        .get(anchor)
        .ok_or_else(|| Error::Config(format!("anchor {anchor} missing from embedding table")))?;
    if k_star == 0 {
        return Err(Error::Config("k_star must be positive".into()));
    }
    let mut scored: Vec<(f64, &ConceptId, u64)> = Vec::with_capacity(agg.len());
    for (c, n) in &agg.pairs {
        if let Some(v) = table.get(c) {
            scored.push((cosine_similarity(v, anchor_vec)?, c, *n));
        }
    }
    scored.sort_by(|a, b| rank_order(&(a.0, a.1), &(b.0, b.1)));

    if scored.len() > k_star {
        let anchor_pos = scored.iter().position(|(_, c, _)| *c == anchor);
        let tail = scored.split_off(k_star);
        if let Some(pos) = anchor_pos.filter(|&p| p >= k_star) {
            scored[k_star - 1] = tail[pos - k_star];
            scored.sort_by(|a, b| rank_order(&(a.0, a.1), &(b.0, b.1)));
        }
    }
    Ok(AggregatedConcepts {
        pairs: scored.into_iter().map(|(_, c, n)| (c.clone(), n)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 0.0, 0.0]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn table_validation() {
        assert!(EmbeddingTable::from_rows(2, vec![(cid("A"), vec![0.0, 0.0])]).is_err());
        let t = EmbeddingTable::from_rows(
            2,
            vec![(cid("A"), vec![1.0, 0.0]), (cid("A"), vec![0.0, 2.0])],
        )
        .unwrap();
        assert_eq!(t.get(&cid("A")).unwrap(), &[0.0, 2.0]);
    }

    #[test]
    fn load_small_and_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.tsv");
        std::fs::write(&good, "A\t1\t0\t0\nB\t0\t1\t0.5\n").unwrap();
        let t = load_embedding_table(&good).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));

        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "A\t1\t0\nB\t0\tx\n").unwrap();
        assert!(matches!(load_embedding_table(&bad), Err(Error::Parse { line: 2, .. })));

        let ragged = dir.path().join("ragged.tsv");
        std::fs::write(&ragged, "A\t1\t0\nB\t0\n").unwrap();
        assert!(matches!(load_embedding_table(&ragged), Err(Error::Parse { line: 2, .. })));

        let zero = dir.path().join("zero.tsv");
        std::fs::write(&zero, "A\t1\t0\nZ\t0\t0\n").unwrap();
        let err = load_embedding_table(&zero).unwrap_err();
        assert!(err.to_string().contains('Z'), "{err}");
    }

    #[test]
    fn under_capacity_keeps_everything() {
        let t = EmbeddingTable::from_rows(
            2,
            vec![
                (cid("A"), vec![1.0, 0.0]),
                (cid("B"), vec![1.0, 1.0]),
                (cid("C"), vec![0.0, 1.0]),
            ],
        )
        .unwrap();
        let agg = AggregatedConcepts {
            pairs: vec![(cid("C"), 1), (cid("B"), 2), (cid("A"), 3)],
        };
        let out = select_features(&agg, &t, &cid("A"), 5).unwrap();
        assert_eq!(out.pairs, vec![(cid("A"), 3), (cid("B"), 2), (cid("C"), 1)]);
    }

    #[test]
    fn anchor_forced_in_when_ranked_out() {
        // B, C, D share the anchor's direction and win the id tie-break.
        let same = vec![1.0, 1.0];
        let t = EmbeddingTable::from_rows(
            2,
            vec![
                (cid("B"), same.clone()),
                (cid("C"), same.clone()),
                (cid("Z"), same.clone()),
                (cid("E"), vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let agg = AggregatedConcepts {
            pairs: vec![(cid("B"), 1), (cid("C"), 2), (cid("Z"), 7), (cid("E"), 4)],
        };
        let out = select_features(&agg, &t, &cid("Z"), 2).unwrap();
        assert_eq!(out.pairs, vec![(cid("B"), 1), (cid("Z"), 7)]);
    }

    #[test]
    fn missing_anchor_is_config_error() {
        let t = EmbeddingTable::from_rows(2, vec![(cid("A"), vec![1.0, 0.0])]).unwrap();
        let agg = AggregatedConcepts::default();
        assert!(matches!(
            select_features(&agg, &t, &cid("Q"), 3),
            Err(Error::Config(_))
        ));
    }
}
