//! LETOR / SVMlight ranking data.
//!
//! Each non-empty line is `<grade> qid:<int> <index>:<value> ...`, optionally
//! followed by a `#` comment. Documents are grouped by qid value; groups keep
//! the order in which their qid first appears and documents keep file order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Largest accepted relevance grade; `2^31 - 1` is still exact in an f64.
pub const MAX_GRADE: u32 = 31;

/// One query-document pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Sparse features sorted by (1-based) feature index.
    features: Vec<(u32, f64)>,
    pub relevance: u32,
}

impl Document {
    /// Builds a document from sparse `(index, value)` pairs in any order.
    pub fn new(relevance: u32, mut features: Vec<(u32, f64)>) -> Result<Self> {
        if relevance > MAX_GRADE {
            return Err(Error::validation(format!(
                "relevance {relevance} exceeds the maximum grade {MAX_GRADE}"
            )));
        }
        features.sort_by_key(|&(idx, _)| idx);
        for pair in features.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::validation(format!(
                    "duplicate feature index {}",
                    pair[0].0
                )));
            }
        }
        for &(idx, value) in &features {
            if idx == 0 {
                return Err(Error::validation("feature indices start at 1"));
            }
            if !value.is_finite() {
                return Err(Error::validation(format!(
                    "feature {idx} has non-finite value {value}"
                )));
            }
        }
        Ok(Document {
            features,
            relevance,
        })
    }

    pub fn features(&self) -> &[(u32, f64)] {
        &self.features
    }

    /// Value of feature `index` (1-based); absent features read as 0.0.
    pub fn feature(&self, index: u32) -> f64 {
        match self.features.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => self.features[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn max_feature_index(&self) -> u32 {
        self.features.last().map_or(0, |&(idx, _)| idx)
    }
}

/// All documents retrieved for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: u64,
    pub documents: Vec<Document>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn relevances(&self) -> Vec<u32> {
        self.documents.iter().map(|d| d.relevance).collect()
    }

    pub fn max_feature_index(&self) -> usize {
        self.documents
            .iter()
            .map(|d| d.max_feature_index() as usize)
            .max()
            .unwrap_or(0)
    }
}

/// Location of a document: `(group index, document index within group)`.
pub type DocRef = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub max_feature_index: usize,
    pub max_grade: u32,
    file_order: Vec<DocRef>,
}

impl Dataset {
    /// Assembles a dataset from groups; file order is taken to be group order.
    pub fn from_groups(groups: Vec<QueryGroup>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (gi, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::validation(format!(
                    "query {} has no documents",
                    group.query_id
                )));
            }
            if seen.insert(group.query_id, gi).is_some() {
                return Err(Error::validation(format!(
                    "query id {} appears in more than one group",
                    group.query_id
                )));
            }
        }
        let file_order = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| (0..g.len()).map(move |di| (gi, di)))
            .collect();
        Ok(Self::assemble(groups, file_order))
    }

    fn assemble(groups: Vec<QueryGroup>, file_order: Vec<DocRef>) -> Self {
        let max_feature_index = groups
            .iter()
            .map(QueryGroup::max_feature_index)
            .max()
            .unwrap_or(0);
        let max_grade = groups
            .iter()
            .flat_map(|g| g.documents.iter().map(|d| d.relevance))
            .max()
            .unwrap_or(0);
        Dataset {
            groups,
            max_feature_index,
            max_grade,
            file_order,
        }
    }

    pub fn num_documents(&self) -> usize {
        self.file_order.len()
    }

    pub fn num_queries(&self) -> usize {
        self.groups.len()
    }

    /// Documents in the order they appeared in the source.
    pub fn file_order(&self) -> &[DocRef] {
        &self.file_order
    }

    /// Start offset of every group in the flattened (group-major) document order,
    /// plus a final entry equal to the document count.
    pub fn group_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.groups.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for g in &self.groups {
            acc += g.len();
            offsets.push(acc);
        }
        offsets
    }

    /// Reorders per-line values (file order) into group-major order.
    pub fn file_to_group_order<T: Copy + Default>(&self, values: &[T]) -> Result<Vec<T>> {
        if values.len() != self.num_documents() {
            return Err(Error::validation(format!(
                "expected {} values, got {}",
                self.num_documents(),
                values.len()
            )));
        }
        let offsets = self.group_offsets();
        let mut out = vec![T::default(); values.len()];
        for (&(gi, di), &v) in self.file_order.iter().zip(values) {
            out[offsets[gi] + di] = v;
        }
        Ok(out)
    }

    /// Reorders group-major values back into file order.
    pub fn group_to_file_order<T: Copy>(&self, values: &[T]) -> Result<Vec<T>> {
        if values.len() != self.num_documents() {
            return Err(Error::validation(format!(
                "expected {} values, got {}",
                self.num_documents(),
                values.len()
            )));
        }
        let offsets = self.group_offsets();
        Ok(self
            .file_order
            .iter()
            .map(|&(gi, di)| values[offsets[gi] + di])
            .collect())
    }

    /// Dense matrix of every document in group-major order.
    pub fn dense_matrix(&self, m: usize) -> Result<FeatureMatrix> {
        let mut matrix = FeatureMatrix::zeros(0, m);
        for group in &self.groups {
            matrix.append(&dense_features(group, m)?);
        }
        Ok(matrix)
    }

    /// Serializes back to LETOR text in the original file order.
    pub fn to_letor_string(&self) -> String {
        let mut out = String::new();
        for &(gi, di) in &self.file_order {
            let group = &self.groups[gi];
            let doc = &group.documents[di];
            write!(out, "{} qid:{}", doc.relevance, group.query_id).unwrap();
            for &(idx, value) in doc.features() {
                write!(out, " {idx}:{value}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Row-major dense matrix. Column `t` holds feature index `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::validation("ragged feature rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    fn append(&mut self, other: &FeatureMatrix) {
        debug_assert_eq!(self.cols, other.cols);
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
    }
}

/// Dense `|documents| x m` feature matrix for one query.
pub fn dense_features(group: &QueryGroup, m: usize) -> Result<FeatureMatrix> {
    let needed = group.max_feature_index();
    if needed > m {
        return Err(Error::validation(format!(
            "query {} uses feature {needed} but only {m} columns were requested",
            group.query_id
        )));
    }
    let mut matrix = FeatureMatrix::zeros(group.len(), m);
    for (j, doc) in group.documents.iter().enumerate() {
        for &(idx, value) in doc.features() {
            matrix.data[j * m + idx as usize - 1] = value;
        }
    }
    Ok(matrix)
}

/// Parses a LETOR text stream.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut by_qid: HashMap<u64, usize> = HashMap::new();
    let mut file_order = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let Some((qid, doc)) = parse_line(&line, lineno)? else {
            continue;
        };
        let gi = *by_qid.entry(qid).or_insert_with(|| {
            groups.push(QueryGroup {
                query_id: qid,
                documents: Vec::new(),
            });
            groups.len() - 1
        });
        file_order.push((gi, groups[gi].documents.len()));
        groups[gi].documents.push(doc);
    }

    Ok(Dataset::assemble(groups, file_order))
}

pub fn parse_str(text: &str) -> Result<Dataset> {
    parse_dataset(text.as_bytes())
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<(u64, Document)>> {
    let body = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = body.split_whitespace();
    let Some(grade_tok) = tokens.next() else {
        return Ok(None);
    };

    let grade: i64 = grade_tok
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad relevance grade `{grade_tok}`")))?;
    if grade < 0 {
        return Err(Error::validation(format!(
            "line {lineno}: negative relevance grade {grade}"
        )));
    }
    if grade > MAX_GRADE as i64 {
        return Err(Error::validation(format!(
            "line {lineno}: relevance grade {grade} exceeds {MAX_GRADE}"
        )));
    }

    let qid_tok = tokens
        .next()
        .ok_or_else(|| Error::parse(lineno, "missing qid"))?;
    let qid: u64 = qid_tok
        .strip_prefix("qid:")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(lineno, format!("bad qid token `{qid_tok}`")))?;

    let mut features = Vec::new();
    for tok in tokens {
        let (idx, value) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(lineno, format!("bad feature token `{tok}`")))?;
        let idx: u32 = idx
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad feature index in `{tok}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad feature value in `{tok}`")))?;
        features.push((idx, value));
    }

    let doc = Document::new(grade as u32, features).map_err(|e| match e {
        Error::Validation(msg) => Error::validation(format!("line {lineno}: {msg}")),
        other => other,
    })?;
    Ok(Some((qid, doc)))
}
