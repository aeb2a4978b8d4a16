//! Newick text export of dendrograms and a parser for reading it back.

use crate::cluster::upgma::Dendrogram;
use crate::error::{Error, Result};

/// Generic rooted tree as read from Newick text.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub name: Option<String>,
    pub length: Option<f64>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    pub fn leaf_names(&self) -> Vec<String> {
        if self.children.is_empty() {
            return self.name.clone().into_iter().collect();
        }
        self.children.iter().flat_map(TreeNode::leaf_names).collect()
    }
}

fn needs_quotes(name: &str) -> bool {
    name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || "()[]':;,".contains(c))
}

fn quote(name: &str) -> String {
    if needs_quotes(name) {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

impl Dendrogram {
    /// Branch lengths are half the height difference between parent and child.
    pub fn to_tree(&self) -> TreeNode {
        self.subtree(self.root(), None)
    }

    fn subtree(&self, id: usize, parent_height: Option<f64>) -> TreeNode {
        let h = self.height(id);
        let length = parent_height.map(|p| (p - h) / 2.0);
        let n = self.num_leaves();
        if id < n {
            return TreeNode {
                name: Some(self.leaves[id].name()),
                length,
                children: Vec::new(),
            };
        }
        let m = self.merges[id - n];
        TreeNode {
            name: None,
            length,
            children: vec![self.subtree(m.left, Some(h)), self.subtree(m.right, Some(h))],
        }
    }
}

pub fn export_tree(tree: &Dendrogram) -> String {
    let mut out = String::new();
    write_node(&tree.to_tree(), &mut out);
    out.push(';');
    out
}

pub fn write_newick(node: &TreeNode) -> String {
    let mut out = String::new();
    write_node(node, &mut out);
    out.push(';');
    out
}

fn write_node(node: &TreeNode, out: &mut String) {
    if !node.children.is_empty() {
        out.push('(');
        for (i, c) in node.children.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_node(c, out);
        }
        out.push(')');
    }
    if let Some(name) = &node.name {
        out.push_str(&quote(name));
    }
    if let Some(len) = node.length {
        out.push(':');
        out.push_str(&len.to_string());
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,

}

impl Parser {
    fn err(&self, msg: &str) -> Error {
        Error::Invalid(format!("newick: {msg} at offset {}", self.pos))
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn node(&mut self) -> Result<TreeNode> {
        self.skip_ws();
        let mut children = Vec::new();
        if self.peek() == Some('(') {
            self.pos += 1;
            loop {
                children.push(self.node()?);
                self.skip_ws();
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `)`")),
                }
            }
        }
        self.skip_ws();
        let name = self.label()?;
        self.skip_ws();
        let length = if self.peek() == Some(':') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self
                .peek()
                .is_some_and(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
            {
                self.pos += 1;
            }
            let text: String = self.chars[start..self.pos].iter().collect();
            Some(text.parse::<f64>().map_err(|_| self.err("bad branch length"))?)
        } else {
            None
        };
        Ok(TreeNode {
            name,
            length,
            children,
        })
    }

    fn label(&mut self) -> Result<Option<String>> {
        if self.peek() == Some('\'') {
            self.pos += 1;
            let mut s = String::new();
            loop {
                match self.peek() {
                    None => return Err(self.err("unterminated quoted label")),
                    Some('\'') if self.chars.get(self.pos + 1) == Some(&'\'') => {
                        s.push('\'');
                        self.pos += 2;
                    }
                    Some('\'') => {
                        self.pos += 1;
                        return Ok(Some(s));
                    }
                    Some(c) => {
                        s.push(c);
                        self.pos += 1;
                    }
                }
            }
        }
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| !c.is_whitespace() && !"()[]':;,".contains(c))
        {
            self.pos += 1;
        }
        Ok((self.pos > start).then(|| self.chars[start..self.pos].iter().collect()))
    }
}

pub fn parse_newick(text: &str) -> Result<TreeNode> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,

    };
    let root = p.node()?;
    p.skip_ws();
    if p.peek() != Some(';') {
        return Err(p.err("expected `;`"));
    }
    p.pos += 1;
    p.skip_ws();
    if p.peek().is_some() {
        return Err(p.err("trailing text"));
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_round_trip() {
        let t = TreeNode {
            name: None,
            length: None,
            children: vec![
                TreeNode {
                    name: Some("it's (odd)".into()),
                    length: Some(0.1),
                    children: vec![],
                },
                TreeNode {
                    name: Some("plain".into()),
                    length: Some(1e-7),
                    children: vec![],
                },
            ],
        };
        let text = write_newick(&t);
        assert_eq!(text, "('it''s (odd)':0.1,plain:0.0000001);");
        assert_eq!(parse_newick(&text).unwrap(), t);
    }

    #[test]
    fn malformed() {
        assert!(parse_newick("(a,b)").is_err());
        assert!(parse_newick("(a,b;").is_err());
        assert!(parse_newick("(a:x,b);").is_err());
    }
}
