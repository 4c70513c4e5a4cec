//! Text serialization of tree ensembles.
//!
//! ```text
//! plrank-model version=1 loss=plrank lr=0.1 topk=10 features=3 trees=1 base=0.0 init=0
//! tree 0 nodes=3
//! N 0 f=2 t=0.5 l=1 r=2
//! L 1 v=-0.25 n=4
//! L 2 v=0.75 n=2
//! ```
//!
//! With `init=1` the background model follows the header as a complete nested
//! model, closed by an `end-init` line. Floats use Rust's shortest round-trip
//! form, so reading and writing again reproduces the same bytes.

use std::collections::HashMap;
use std::fmt::Write as _;

use plrank::{Ensemble, EnsembleMeta, Error, Loss, RegressionTree, Result, TreeNode};

pub const MAGIC: &str = "plrank-model";
pub const VERSION: u32 = 1;

pub fn write_model(model: &Ensemble) -> String {
    let mut out = String::new();
    write_into(model, &mut out);
    out
}

fn write_into(model: &Ensemble, out: &mut String) {
    writeln!(
        out,
        "{MAGIC} version={VERSION} loss={} lr={:?} topk={} features={} trees={} base={:?} init={}",
        model.meta.loss,
        model.learning_rate,
        model.meta.top_k,
        model.meta.feature_count,
        model.trees.len(),
        model.base_score,
        u8::from(model.init.is_some()),
    )
    .unwrap();
    if let Some(init) = &model.init {
        write_into(init, out);
        out.push_str("end-init\n");
    }
    for (i, tree) in model.trees.iter().enumerate() {
        writeln!(out, "tree {i} nodes={}", tree.nodes().len()).unwrap();
        for (id, node) in tree.nodes().iter().enumerate() {
            match node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => writeln!(out, "N {id} f={feature} t={threshold:?} l={left} r={right}"),
                TreeNode::Leaf { output, doc_count } => {
                    writeln!(out, "L {id} v={output:?} n={doc_count}")
                }
            }
            .unwrap();
        }
    }
}

pub fn read_model(text: &str) -> Result<Ensemble> {
    let mut reader = Reader {
        lines: text.lines().collect(),
        pos: 0,
    };
    let model = reader.model()?;
    if let Some((lineno, line)) = reader.next_nonblank() {
        return Err(Error::Parse {
            line: lineno,
            message: format!("unexpected trailing line `{line}`"),
        });
    }
    Ok(model)
}

/// True when `text` starts like a tree ensemble model file.
pub fn is_ensemble(text: &str) -> bool {
    text.trim_start().starts_with(MAGIC)
}

struct Reader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Splits `key=value` tokens, rejecting anything else.
fn fields<'a>(lineno: usize, tokens: &[&'a str]) -> Result<HashMap<&'a str, &'a str>> {
    tokens
        .iter()
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| parse_err(lineno, format!("expected key=value, got `{t}`")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(lineno: usize, map: &HashMap<&str, &str>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| parse_err(lineno, format!("missing `{key}`")))?;
    raw.parse()
        .map_err(|_| parse_err(lineno, format!("bad value `{raw}` for `{key}`")))
}

impl<'a> Reader<'a> {
    fn next_nonblank(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos].trim();
            self.pos += 1;
            if !line.is_empty() {
                return Some((self.pos, line));
            }
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let end = self.lines.len();
        self.next_nonblank()
            .ok_or_else(|| parse_err(end, format!("unexpected end of file, expected {what}")))
    }

    fn model(&mut self) -> Result<Ensemble> {
        let (lineno, header) = self.expect_line("model header")?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.first() != Some(&MAGIC) {
            return Err(parse_err(lineno, "not a plrank model file"));
        }
        let map = fields(lineno, &tokens[1..])?;
        let version: u32 = field(lineno, &map, "version")?;
        if version != VERSION {
            return Err(Error::Validation(format!(
                "model format version {version} is not supported (expected {VERSION})"
            )));
        }
        let loss: Loss = field::<String>(lineno, &map, "loss")?
            .parse()
            .map_err(|_| parse_err(lineno, "unknown loss"))?;
        let learning_rate: f64 = field(lineno, &map, "lr")?;
        let top_k: usize = field(lineno, &map, "topk")?;
        let feature_count: usize = field(lineno, &map, "features")?;
        let tree_count: usize = field(lineno, &map, "trees")?;
        let base_score: f64 = field(lineno, &map, "base")?;
        let has_init: u8 = field(lineno, &map, "init")?;
        if has_init > 1 {
            return Err(parse_err(lineno, "init must be 0 or 1"));
        }

        let init = if has_init == 1 {
            let nested = self.model()?;
            let (l, line) = self.expect_line("end-init")?;
            if line != "end-init" {
                return Err(parse_err(l, format!("expected end-init, got `{line}`")));
            }
            Some(Box::new(nested))
        } else {
            None
        };

        let mut trees = Vec::with_capacity(tree_count);
        for i in 0..tree_count {
            trees.push(self.tree(i)?);
        }
        Ok(Ensemble {
            trees,
            learning_rate,
            base_score,
            init,
            meta: EnsembleMeta {
                loss,
                top_k,
                feature_count,
            },
        })
    }

    fn tree(&mut self, index: usize) -> Result<RegressionTree> {
        let (lineno, line) = self.expect_line("tree record")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 || tokens[0] != "tree" || tokens[1] != index.to_string() {
            return Err(parse_err(
                lineno,
                format!("expected `tree {index} nodes=<n>`"),
            ));
        }
        let node_count: usize = field(lineno, &fields(lineno, &tokens[2..])?, "nodes")?;
        let mut nodes = Vec::with_capacity(node_count);
        for id in 0..node_count {
            let (lineno, line) = self.expect_line("node record")?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < 2 || tokens[1] != id.to_string() {
                return Err(parse_err(lineno, format!("expected node {id}")));
            }
            let map = fields(lineno, &tokens[2..])?;
            let node = match tokens[0] {
                "N" if map.len() == 4 => TreeNode::Internal {
                    feature: field(lineno, &map, "f")?,
                    threshold: field(lineno, &map, "t")?,
                    left: field(lineno, &map, "l")?,
                    right: field(lineno, &map, "r")?,
                },
                "L" if map.len() == 2 => TreeNode::Leaf {
                    output: field(lineno, &map, "v")?,
                    doc_count: field(lineno, &map, "n")?,
                },
                _ => return Err(parse_err(lineno, format!("bad node record `{line}`"))),
            };
            nodes.push(node);
        }
        RegressionTree::from_nodes(nodes)
            .map_err(|e| parse_err(lineno, format!("tree {index}: {e}")))
    }
}
