//! Tree export: Graphviz `dot` for inspection and a lossless JSON document
//! (schema in `docs/tree-format.md`) that re-imports to an identical tree.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeKind, SearchTree};

pub const TREE_FORMAT: &str = "abmcts-tree";
pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Dot,
    /// One JSON document per tree.
    Records,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(ExportFormat::Dot),
            "records" | "json" => Ok(ExportFormat::Records),
            other => Err(Error::Config(format!("unknown export format `{other}`"))),
        }
    }
}

#[derive(Serialize)]
struct DocumentRef<'a> {
    format: &'a str,
    version: u32,
    tree: &'a SearchTree,
}

#[derive(Deserialize)]
struct Document {
    format: String,
    version: u32,
    tree: SearchTree,
}

pub fn export_tree<W: Write>(tree: &SearchTree, format: ExportFormat, mut out: W) -> Result<()> {
    match format {
        ExportFormat::Dot => out.write_all(to_dot(tree).as_bytes())?,
        ExportFormat::Records => {
            serde_json::to_writer(&mut out, &document(tree))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn document(tree: &SearchTree) -> DocumentRef<'_> {
    DocumentRef {
        format: TREE_FORMAT,
        version: TREE_FORMAT_VERSION,
        tree,
    }
}

pub fn to_json(tree: &SearchTree) -> String {
    serde_json::to_string(&document(tree)).expect("tree serialization is infallible")
}

pub fn import_tree(text: &str) -> Result<SearchTree> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.format != TREE_FORMAT {
        return Err(Error::Import(format!("unexpected format `{}`", doc.format)));
    }
    if doc.version != TREE_FORMAT_VERSION {
        return Err(Error::Import(format!(
            "unsupported version {}",
            doc.version
        )));
    }
    let mut tree = doc.tree;
    tree.relink()?;
    tree.validate().map_err(|e| Error::Import(e.to_string()))?;
    Ok(tree)
}

/// Red (0) to green (1) hue; scores outside `[0, 1]` are clamped.
fn score_color(score: f64) -> String {
    let hue = score.clamp(0.0, 1.0) / 3.0;
    format!("{hue:.3} 0.55 0.95")
}

pub fn to_dot(tree: &SearchTree) -> String {
    let mut s = String::new();
    s.push_str("digraph search_tree {\n");
    s.push_str("  node [style=filled, fontname=\"Helvetica\"];\n");
    for node in tree.nodes() {
        let id = node.id();
        let _ = match node.kind() {
            NodeKind::Root => writeln!(
                s,
                "  {id} [label=\"root\", shape=doublecircle, fillcolor=\"white\"];"
            ),
            NodeKind::Gen => writeln!(
                s,
                "  {id} [label=\"GEN{}\", shape=box, fillcolor=\"lightblue\", fontsize=8];",
                node.generator().map(|g| g.0).unwrap_or(0)
            ),
            NodeKind::Cont => writeln!(
                s,
                "  {id} [label=\"CONT\", shape=box, fillcolor=\"khaki\", fontsize=8];"
            ),
            NodeKind::Answer => {
                let step = node.created_at().unwrap_or(0);
                match node.score() {
                    Some(r) => writeln!(
                        s,
                        "  {id} [label=\"{step}\\n{r:.3}\", shape=circle, fillcolor=\"{}\"];",
                        score_color(r)
                    ),
                    None => writeln!(
                        s,
                        "  {id} [label=\"{step}\\nfailed\", shape=circle, style=\"filled,dashed\", fillcolor=\"gray80\", class=\"failed\"];"
                    ),
                }
            }
        };
    }
    for node in tree.nodes() {
        if let Some(p) = node.parent() {
            let _ = writeln!(s, "  {p} -> {};", node.id());
        }
    }
    s.push_str("}\n");
    s
}
