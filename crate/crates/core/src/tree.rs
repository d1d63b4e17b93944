//! Arena-backed search tree shared by every policy.
//!
//! Three node shapes are supported. `Mixed` trees give every answer (and the
//! root) one GEN child per generator slot. `Aggregated` trees add a single
//! CONT child under which all answer children of that node hang. `Plain`
//! trees hold answers only and back the baseline policies.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(index: usize) -> Self {
        NodeId(u32::try_from(index).expect("tree arena exceeds u32 range"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index of an answer generator, `0..L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeneratorId(pub u32);

impl GeneratorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Answer,
    Gen,
    Cont,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeShape {
    /// GEN children only (AB-MCTS-M).
    Mixed,
    /// GEN plus CONT children (AB-MCTS-A).
    Aggregated,
    /// Answers only (baselines).
    Plain,
}

/// How a failed generation contributes to score backup.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum FailurePolicy {
    /// Failed nodes are kept but never observed.
    #[default]
    Skip,
    /// Failed nodes back up the given score in place of a real one.
    Substitute(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub score: f64,
    /// Answer node whose score this is.
    pub source: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    id: NodeId,
    parent: Option<NodeId>,
    kind: NodeKind,
    payload: Option<String>,
    score: Option<f64>,
    feedback: Option<String>,
    generator: Option<GeneratorId>,
    created_at: Option<u64>,
    failed: bool,
    observations: Vec<Observation>,
    #[serde(skip)]
    children: Vec<NodeId>,
}

impl Node {
    fn structural(id: NodeId, parent: Option<NodeId>, kind: NodeKind) -> Self {
        Node {
            id,
            parent,
            kind,
            payload: None,
            score: None,
            feedback: None,
            generator: None,
            created_at: None,
            failed: false,
            observations: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }
    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }
    pub fn kind(&self) -> NodeKind {
        self.kind
    }
    pub fn payload(&self) -> Option<&str> {
        self.payload.as_deref()
    }
    pub fn score(&self) -> Option<f64> {
        self.score
    }
    pub fn feedback(&self) -> Option<&str> {
        self.feedback.as_deref()
    }
    /// Producing generator for answers; slot index for GEN nodes.
    pub fn generator(&self) -> Option<GeneratorId> {
        self.generator
    }
    pub fn created_at(&self) -> Option<u64> {
        self.created_at
    }
    pub fn failed(&self) -> bool {
        self.failed
    }
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
    pub fn observed_scores(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.score).collect()
    }
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }
    pub fn is_answer_like(&self) -> bool {
        matches!(self.kind, NodeKind::Root | NodeKind::Answer)
    }
}

/// Content of a freshly generated answer.
#[derive(Clone, Debug, PartialEq)]
pub struct NewAnswer {
    pub payload: String,
    pub score: Option<f64>,
    pub feedback: Option<String>,
    pub generator: GeneratorId,
    pub failed: bool,
}

impl NewAnswer {
    pub fn scored(payload: impl Into<String>, score: f64) -> Self {
        NewAnswer {
            payload: payload.into(),
            score: Some(score),
            feedback: None,
            generator: GeneratorId(0),
            failed: false,
        }
    }

    pub fn failed(payload: impl Into<String>) -> Self {
        NewAnswer {
            payload: payload.into(),
            score: None,
            feedback: None,
            generator: GeneratorId(0),
            failed: true,
        }
    }

    pub fn with_generator(mut self, generator: GeneratorId) -> Self {
        self.generator = generator;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    shape: TreeShape,
    gen_slots: usize,
    step: u64,
    root: NodeId,
    nodes: Vec<Node>,
}

impl SearchTree {
    pub fn new(shape: TreeShape) -> Self {
        Self::with_gen_slots(shape, 1)
    }

    /// A tree whose answer nodes each carry `slots` GEN children (one per
    /// generator). Plain trees ignore the slot count.
    pub fn with_gen_slots(shape: TreeShape, slots: usize) -> Self {
        let slots = if shape == TreeShape::Plain {
            1
        } else {
            slots.max(1)
        };
        let root = NodeId(0);
        let mut tree = SearchTree {
            shape,
            gen_slots: slots,
            step: 0,
            root,
            nodes: vec![Node::structural(root, None, NodeKind::Root)],
        };
        tree.attach_structure(root);
        tree
    }

    pub fn shape(&self) -> TreeShape {
        self.shape
    }
    pub fn gen_slots(&self) -> usize {
        self.gen_slots
    }
    /// Number of committed answer nodes.
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn root(&self) -> NodeId {
        self.root
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.get(id).ok_or(Error::UnknownNode(id))
    }

    pub(crate) fn at(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn answers(&self) -> impl Iterator<Item = &Node> + '_ {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Answer)
    }

    pub fn answer_count(&self) -> usize {
        self.answers().count()
    }

    fn push(&mut self, parent: Option<NodeId>, mut node: Node) -> NodeId {
        let id = NodeId::from_index(self.nodes.len());
        node.id = id;
        node.parent = parent;
        if let Some(p) = parent {
            self.nodes[p.index()].children.push(id);
        }
        self.nodes.push(node);
        id
    }

    fn attach_structure(&mut self, owner: NodeId) {
        match self.shape {
            TreeShape::Plain => {}
            TreeShape::Mixed | TreeShape::Aggregated => {
                for slot in 0..self.gen_slots {
                    let mut gen = Node::structural(owner, Some(owner), NodeKind::Gen);
                    gen.generator = Some(GeneratorId(slot as u32));
                    self.push(Some(owner), gen);
                }
                if self.shape == TreeShape::Aggregated {
                    self.push(
                        Some(owner),
                        Node::structural(owner, Some(owner), NodeKind::Cont),
                    );
                }
            }
        }
    }

    /// GEN child of `owner` for generator slot `slot`.
    pub fn gen_child(&self, owner: NodeId, slot: usize) -> Option<NodeId> {
        self.get(owner)?
            .children
            .iter()
            .copied()
            .filter(|c| self.at(*c).kind == NodeKind::Gen)
            .nth(slot)
    }

    pub fn cont_child(&self, owner: NodeId) -> Option<NodeId> {
        self.get(owner)?
            .children
            .iter()
            .copied()
            .find(|c| self.at(*c).kind == NodeKind::Cont)
    }

    /// Answer children of a root/answer node, in creation order. In an
    /// aggregated tree these are the children of its CONT node.
    pub fn answer_children(&self, owner: NodeId) -> Vec<NodeId> {
        let holder = match self.shape {
            TreeShape::Aggregated => match self.cont_child(owner) {
                Some(c) => c,
                None => return Vec::new(),
            },
            _ => owner,
        };
        self.at(holder)
            .children
            .iter()
            .copied()
            .filter(|c| self.at(*c).kind == NodeKind::Answer)
            .collect()
    }

    /// Nearest root/answer ancestor, skipping CONT nodes.
    pub fn answer_parent(&self, id: NodeId) -> Option<NodeId> {
        let mut cur = self.get(id)?.parent?;
        while !self.at(cur).is_answer_like() {
            cur = self.at(cur).parent?;
        }
        Some(cur)
    }

    /// Answer-level depth; the root sits at depth 0.
    pub fn answer_depth(&self, id: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = id;
        while let Some(p) = self.answer_parent(cur) {
            depth += 1;
            cur = p;
        }
        depth
    }

    /// Answer ancestors of `id` from the top of the tree down to `id`
    /// itself. The root is excluded.
    pub fn lineage(&self, id: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            if self.at(c).kind == NodeKind::Answer {
                chain.push(c);
            }
            cur = self.answer_parent(c);
        }
        chain.reverse();
        chain
    }

    /// Which GEN slot produced answers from `generator`.
    pub fn slot_for(&self, generator: GeneratorId) -> usize {
        if self.gen_slots == 1 {
            0
        } else {
            generator.index()
        }
    }

    /// Append a new answer under `parent` (root or answer). In aggregated
    /// trees the node is routed under the parent's CONT child. The step
    /// counter advances by one.
    pub fn add_answer_node(&mut self, parent: NodeId, answer: NewAnswer) -> Result<NodeId> {
        let pnode = self.node(parent)?;
        if !pnode.is_answer_like() {
            return Err(Error::InvalidParent {
                id: parent,
                kind: pnode.kind,
            });
        }
        if self.gen_slots > 1 && answer.generator.index() >= self.gen_slots {
            return Err(Error::BadGenSlot {
                slot: answer.generator.index(),
                slots: self.gen_slots,
            });
        }
        if let Some(s) = answer.score {
            if !s.is_finite() {
                return Err(Error::NonFiniteScore(s));
            }
        }
        let holder = match self.shape {
            TreeShape::Aggregated => self
                .cont_child(parent)
                .ok_or_else(|| Error::Invariant(format!("{parent} has no CONT child")))?,
            _ => parent,
        };
        let failed = answer.failed || answer.score.is_none();
        let node = Node {
            id: NodeId(0),
            parent: None,
            kind: NodeKind::Answer,
            payload: Some(answer.payload),
            score: if failed { None } else { answer.score },
            feedback: answer.feedback,
            generator: Some(answer.generator),
            created_at: Some(self.step),
            failed,
            observations: Vec::new(),
            children: Vec::new(),
        };
        let id = self.push(Some(holder), node);
        self.attach_structure(id);
        self.step += 1;
        Ok(id)
    }

    fn backup_value(&self, id: NodeId, failure: FailurePolicy) -> Option<f64> {
        let node = self.at(id);
        match (node.score, failure) {
            (Some(s), _) => Some(s),
            (None, FailurePolicy::Substitute(v)) if node.failed => Some(v),
            _ => None,
        }
    }

    fn check_answer(&self, id: NodeId) -> Result<()> {
        let node = self.node(id)?;
        if node.kind != NodeKind::Answer {
            return Err(Error::InvalidParent {
                id,
                kind: node.kind,
            });
        }
        Ok(())
    }

    /// Mixed-model backup: the score goes to the new node and every
    /// answer/root ancestor. GEN nodes receive nothing.
    pub fn backup_m(&mut self, new_node: NodeId, failure: FailurePolicy) -> Result<()> {
        self.expect_shape(TreeShape::Mixed)?;
        self.backup_along_answers(new_node, failure)
    }

    /// Aggregation backup: new node, then the GEN node that produced it,
    /// then that GEN node's ancestors (answers, CONT nodes and the root).
    pub fn backup_a(&mut self, new_node: NodeId, failure: FailurePolicy) -> Result<()> {
        self.expect_shape(TreeShape::Aggregated)?;
        self.check_answer(new_node)?;
        let Some(score) = self.backup_value(new_node, failure) else {
            return Ok(());
        };
        let obs = Observation {
            score,
            source: new_node,
        };
        let parent = self
            .answer_parent(new_node)
            .ok_or_else(|| Error::Invariant(format!("{new_node} has no answer parent")))?;
        let generator = self.at(new_node).generator.unwrap_or(GeneratorId(0));
        let gen = self
            .gen_child(parent, self.slot_for(generator))
            .ok_or_else(|| Error::Invariant(format!("{parent} lacks a GEN slot")))?;
        self.nodes[new_node.index()].observations.push(obs);
        let mut cur = Some(gen);
        while let Some(c) = cur {
            self.nodes[c.index()].observations.push(obs);
            cur = self.at(c).parent;
        }
        Ok(())
    }

    /// Baseline backup: new node and all of its ancestors.
    pub fn backup_plain(&mut self, new_node: NodeId, failure: FailurePolicy) -> Result<()> {
        self.expect_shape(TreeShape::Plain)?;
        self.backup_along_answers(new_node, failure)
    }

    /// Shape-appropriate backup.
    pub fn backup(&mut self, new_node: NodeId, failure: FailurePolicy) -> Result<()> {
        match self.shape {
            TreeShape::Mixed => self.backup_m(new_node, failure),
            TreeShape::Aggregated => self.backup_a(new_node, failure),
            TreeShape::Plain => self.backup_plain(new_node, failure),
        }
    }

    fn backup_along_answers(&mut self, new_node: NodeId, failure: FailurePolicy) -> Result<()> {
        self.check_answer(new_node)?;
        let Some(score) = self.backup_value(new_node, failure) else {
            return Ok(());
        };
        let obs = Observation {
            score,
            source: new_node,
        };
        let mut cur = Some(new_node);
        while let Some(c) = cur {
            self.nodes[c.index()].observations.push(obs);
            cur = self.answer_parent(c);
        }
        Ok(())
    }

    fn expect_shape(&self, expected: TreeShape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::WrongShape {
                expected,
                found: self.shape,
            });
        }
        Ok(())
    }

    /// Highest-scoring answer; ties go to the latest created.
    pub fn select_best(&self) -> Result<NodeId> {
        self.ranked_answers()
            .first()
            .copied()
            .ok_or(Error::NoScoredNodes)
    }

    /// Scored answers ordered by (score, created_at), best first.
    pub fn ranked_answers(&self) -> Vec<NodeId> {
        let mut scored: Vec<&Node> = self.answers().filter(|n| n.score.is_some()).collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.created_at.cmp(&a.created_at))
        });
        scored.into_iter().map(|n| n.id).collect()
    }

    /// The prefix of this tree holding only the first `answers` committed
    /// answer nodes. Node creation order is total, so this is exactly the
    /// tree an identical run with a smaller budget would have produced.
    pub fn truncated(&self, answers: u64) -> SearchTree {
        if answers >= self.step {
            return self.clone();
        }
        let cut = self
            .nodes
            .iter()
            .find(|n| n.created_at == Some(answers))
            .map(|n| n.id.index())
            .unwrap_or(self.nodes.len());
        let mut nodes: Vec<Node> = self.nodes[..cut].to_vec();
        for n in &mut nodes {
            n.children.retain(|c| c.index() < cut);
            n.observations.retain(|o| o.source.index() < cut);
        }
        SearchTree {
            shape: self.shape,
            gen_slots: self.gen_slots,
            step: answers,
            root: self.root,
            nodes,
        }
    }

    /// Walk the whole arena and check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invariant(msg));
        let Some(root) = self.nodes.first() else {
            return bad("empty arena".into());
        };
        if root.kind != NodeKind::Root || root.parent.is_some() || self.root != NodeId(0) {
            return bad("node 0 must be a parentless root".into());
        }
        let mut answers = 0u64;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.index() != i {
                return bad(format!("node at {i} carries id {}", n.id));
            }
            if i > 0 {
                let Some(p) = n.parent else {
                    return bad(format!("{} has no parent", n.id));
                };
                if p.index() >= i {
                    return bad(format!("{} has a parent created after it", n.id));
                }
                if !self.at(p).children.contains(&n.id) {
                    return bad(format!("{p} does not list child {}", n.id));
                }
                if n.kind == NodeKind::Root {
                    return bad(format!("{} is a second root", n.id));
                }
            }
            for c in &n.children {
                if self.get(*c).and_then(|c| c.parent) != Some(n.id) {
                    return bad(format!("{} lists {c} which points elsewhere", n.id));
                }
            }
            match n.kind {
                NodeKind::Answer => {
                    answers += 1;
                    if n.payload.is_none() {
                        return bad(format!("answer {} without payload", n.id));
                    }
                }
                NodeKind::Gen | NodeKind::Cont => {
                    if n.payload.is_some() || n.score.is_some() {
                        return bad(format!("structural {} carries content", n.id));
                    }
                }
                NodeKind::Root => {}
            }
            if n.failed && n.score.is_some() {
                return bad(format!("failed {} has a score", n.id));
            }
            self.validate_shape(n)?;
        }
        if answers != self.step {
            return bad(format!("{answers} answers but step counter {}", self.step));
        }
        Ok(())
    }

    fn validate_shape(&self, n: &Node) -> Result<()> {
        let bad = |msg: String| Err(Error::Invariant(msg));
        let kinds = |k: NodeKind| n.children.iter().filter(|c| self.at(**c).kind == k).count();
        let parent_kind = n.parent.map(|p| self.at(p).kind);
        match (self.shape, n.kind) {
            (TreeShape::Plain, NodeKind::Gen | NodeKind::Cont) => {
                bad(format!("plain tree holds structural {}", n.id))
            }
            (TreeShape::Mixed, NodeKind::Cont) => bad(format!("mixed tree holds CONT {}", n.id)),
            (_, NodeKind::Gen) if !n.children.is_empty() => {
                bad(format!("GEN {} has children", n.id))
            }
            (TreeShape::Mixed, NodeKind::Root | NodeKind::Answer) => {
                if kinds(NodeKind::Gen) != self.gen_slots {
                    return bad(format!("{} lacks its GEN children", n.id));
                }
                if n.kind == NodeKind::Answer
                    && !matches!(parent_kind, Some(NodeKind::Root | NodeKind::Answer))
                {
                    return bad(format!("{} hangs under a structural node", n.id));
                }
                Ok(())
            }
            (TreeShape::Aggregated, NodeKind::Root | NodeKind::Answer) => {
                if kinds(NodeKind::Gen) != self.gen_slots || kinds(NodeKind::Cont) != 1 {
                    return bad(format!("{} lacks GEN/CONT children", n.id));
                }
                if kinds(NodeKind::Answer) != 0 {
                    return bad(format!("{} has answers outside its CONT", n.id));
                }
                if n.kind == NodeKind::Answer && parent_kind != Some(NodeKind::Cont) {
                    return bad(format!("{} is not under a CONT node", n.id));
                }
                Ok(())
            }
            (TreeShape::Aggregated, NodeKind::Cont) => {
                if kinds(NodeKind::Answer) != n.children.len() {
                    return bad(format!("CONT {} holds non-answers", n.id));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Rebuild child lists after deserialization.
    pub(crate) fn relink(&mut self) -> Result<()> {
        for n in &mut self.nodes {
            n.children.clear();
        }
        for i in 0..self.nodes.len() {
            if let Some(p) = self.nodes[i].parent {
                let id = self.nodes[i].id;
                self.nodes
                    .get_mut(p.index())
                    .ok_or(Error::UnknownNode(p))?
                    .children
                    .push(id);
            }
        }
        Ok(())
    }
}
