//! Joint dependency graphs: typed edges, per-direction evaluation orders,
//! connection variants, and validation.
//!
//! Config files are line-oriented plain text: `joint <idx> <name>`,
//! `root <idx>`, `edge <from> <to> physical|symmetrical|extra`, with `#`
//! comments. [`SkeletonGraph::to_config_text`] emits the canonical form
//! (joints ascending, then root, then edges in declaration order); loading
//! canonical text and saving again is byte-identical, and the shipped graph
//! files are stored canonically.

use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: joint index {index} out of range for {joints} joints")]
    OutOfRange { line: usize, index: usize, joints: usize },
    #[error("line {line}: self-loop on joint {joint}")]
    SelfLoop { line: usize, joint: usize },
    #[error("line {line}: duplicate edge {from} -> {to}")]
    DuplicateEdge { line: usize, from: usize, to: usize },
    #[error("line {line}: joint {index} declared twice")]
    DuplicateJoint { line: usize, index: usize },
    #[error("joint indices must cover 0..{expected} densely; missing {index}")]
    MissingJoint { expected: usize, index: usize },
    #[error("no root declared")]
    MissingRoot,
    #[error("line {line}: root declared twice")]
    DuplicateRoot { line: usize },
    #[error("graph rejected: {0}")]
    Invalid(Issue),
    #[error("variant requires a shipped default graph; got an unrecognized topology")]
    UnknownVariantBase,
    #[error("reading graph config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Physical,
    Symmetrical,
    Extra,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Physical => "physical",
            EdgeKind::Symmetrical => "symmetrical",
            EdgeKind::Extra => "extra",
        }
    }

    fn parse(token: &str) -> Option<EdgeKind> {
        match token {
            "physical" => Some(EdgeKind::Physical),
            "symmetrical" => Some(EdgeKind::Symmetrical),
            "extra" => Some(EdgeKind::Extra),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Immutable joint dependency graph. Edge order is the declaration order of
/// the config it was built from; downstream aggregation iterates predecessors
/// in that order, which keeps relabeled graphs bit-compatible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonGraph {
    names: Vec<String>,
    root: usize,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Topological evaluation schedule for one direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassOrder {
    pub direction: Direction,
    /// Joint indices in evaluation order.
    pub sequence: Vec<usize>,
    /// Predecessor set N_j per joint, in edge-declaration order.
    pub preds: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeProfile {
    /// Non-root joints carry at most 4 incident links; the root is exempt.
    Default,
    /// Densified graphs: every joint carries at most 8 incident links.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Issue {
    Cycle { path: Vec<usize> },
    Unreachable { joints: Vec<usize> },
    DegreeCap { joint: usize, degree: usize, cap: usize },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Cycle { path } => {
                write!(f, "forward cycle through joints ")?;
                for (i, j) in path.iter().enumerate() {
                    if i > 0 {
                        write!(f, " -> ")?;
                    }
                    write!(f, "{j}")?;
                }
                Ok(())
            }
            Issue::Unreachable { joints } => {
                write!(f, "joints unreachable from root: {joints:?}")
            }
            Issue::DegreeCap { joint, degree, cap } => {
                write!(f, "joint {joint} has {degree} incident links (cap {cap})")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub profile: DegreeProfile,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            write!(f, "ok")
        } else {
            for (i, issue) in self.issues.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "{issue}")?;
            }
            Ok(())
        }
    }
}

impl SkeletonGraph {
    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Undirected incident-link count per joint, all edge kinds.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.joint_count()];
        for e in &self.edges {
            deg[e.from] += 1;
            deg[e.to] += 1;
        }
        deg
    }

    /// Structural and profile checks. Reports every violation instead of
    /// stopping at the first.
    pub fn validate(&self, profile: DegreeProfile) -> ValidationReport {
        let mut issues = Vec::new();
        if let Some(path) = self.find_cycle() {
            issues.push(Issue::Cycle { path });
        } else {
            // Reachability is only meaningful on a DAG orientation.
            let missed = self.unreachable_from_root();
            if !missed.is_empty() {
                issues.push(Issue::Unreachable { joints: missed });
            }
        }
        let cap = match profile {
            DegreeProfile::Default => 4,
            DegreeProfile::Extended => 8,
        };
        for (joint, &degree) in self.degrees().iter().enumerate() {
            if profile == DegreeProfile::Default && joint == self.root {
                continue;
            }
            if degree > cap {
                issues.push(Issue::DegreeCap { joint, degree, cap });
            }
        }
        ValidationReport { profile, issues }
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.joint_count()];
        for e in &self.edges {
            adj[e.from].push(e.to);
        }
        adj
    }

    /// One forward-orientation cycle if any exists, as a closed joint path.
    fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let adj = self.adjacency();
        let mut color = vec![Color::White; self.joint_count()];
        let mut stack: Vec<usize> = Vec::new();

        fn dfs(
            v: usize,
            adj: &[Vec<usize>],
            color: &mut [Color],
            stack: &mut Vec<usize>,
        ) -> Option<Vec<usize>> {
            color[v] = Color::Gray;
            stack.push(v);
            for &n in &adj[v] {
                match color[n] {
                    Color::Gray => {
                        let start = stack.iter().position(|&s| s == n).expect("gray on stack");
                        let mut path = stack[start..].to_vec();
                        path.push(n);
                        return Some(path);
                    }
                    Color::White => {
                        if let Some(p) = dfs(n, adj, color, stack) {
                            return Some(p);
                        }
                    }
                    Color::Black => {}
                }
            }
            stack.pop();
            color[v] = Color::Black;
            None
        }

        for v in 0..self.joint_count() {
            if color[v] == Color::White {
                if let Some(p) = dfs(v, &adj, &mut color, &mut stack) {
                    return Some(p);
                }
            }
        }
        None
    }

    fn unreachable_from_root(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.joint_count()];
        let mut queue = vec![self.root];
        seen[self.root] = true;
        while let Some(v) = queue.pop() {
            for &n in &adj[v] {
                if !seen[n] {
                    seen[n] = true;
                    queue.push(n);
                }
            }
        }
        (0..self.joint_count()).filter(|&j| !seen[j]).collect()
    }

    /// Canonical config text; see module docs.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(&format!("joint {i} {name}\n"));
        }
        out.push_str(&format!("root {}\n", self.root));
        for e in &self.edges {
            out.push_str(&format!("edge {} {} {}\n", e.from, e.to, e.kind.as_str()));
        }
        out
    }
}

/// Parses config text. Catches syntax and local structural faults (range,
/// self-loops, duplicates, root declaration); does not check acyclicity or
/// reachability, so the result can still be fed to [`SkeletonGraph::validate`]
/// for a full report.
pub fn parse_graph(text: &str) -> Result<SkeletonGraph, GraphError> {
    let mut joints: Vec<(usize, String)> = Vec::new();
    let mut root: Option<(usize, usize)> = None; // (index, line)
    let mut edges: Vec<(Edge, usize)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let head = toks.next().expect("non-empty line");
        let rest: Vec<&str> = toks.collect();
        let parse_idx = |tok: &str| -> Result<usize, GraphError> {
            tok.parse().map_err(|_| GraphError::Syntax {
                line,
                msg: format!("expected joint index, got `{tok}`"),
            })
        };
        match head {
            "joint" => {
                if rest.len() != 2 {
                    return Err(GraphError::Syntax {
                        line,
                        msg: "joint line needs `joint <idx> <name>`".into(),
                    });
                }
                let idx = parse_idx(rest[0])?;
                if joints.iter().any(|(i, _)| *i == idx) {
                    return Err(GraphError::DuplicateJoint { line, index: idx });
                }
                joints.push((idx, rest[1].to_string()));
            }
            "root" => {
                if rest.len() != 1 {
                    return Err(GraphError::Syntax {
                        line,
                        msg: "root line needs `root <idx>`".into(),
                    });
                }
                if root.is_some() {
                    return Err(GraphError::DuplicateRoot { line });
                }
                root = Some((parse_idx(rest[0])?, line));
            }
            "edge" => {
                if rest.len() != 3 {
                    return Err(GraphError::Syntax {
                        line,
                        msg: "edge line needs `edge <from> <to> <kind>`".into(),
                    });
                }
                let from = parse_idx(rest[0])?;
                let to = parse_idx(rest[1])?;
                let kind = EdgeKind::parse(rest[2]).ok_or_else(|| GraphError::Syntax {
                    line,
                    msg: format!("unknown edge kind `{}`", rest[2]),
                })?;
                if from == to {
                    return Err(GraphError::SelfLoop { line, joint: from });
                }
                if edges.iter().any(|(e, _)| e.from == from && e.to == to) {
                    return Err(GraphError::DuplicateEdge { line, from, to });
                }
                edges.push((Edge { from, to, kind }, line));
            }
            other => {
                return Err(GraphError::Syntax {
                    line,
                    msg: format!("unknown directive `{other}`"),
                });
            }
        }
    }

    let joint_count = joints.len();
    if joint_count == 0 {
        return Err(GraphError::Syntax { line: 0, msg: "no joints declared".into() });
    }
    let mut names = vec![String::new(); joint_count];
    for (idx, name) in joints {
        if idx >= joint_count {
            return Err(GraphError::MissingJoint { expected: joint_count, index: idx });
        }
        names[idx] = name;
    }
    if let Some(missing) = names.iter().position(String::is_empty) {
        return Err(GraphError::MissingJoint { expected: joint_count, index: missing });
    }
    let (root, root_line) = root.ok_or(GraphError::MissingRoot)?;
    if root >= joint_count {
        return Err(GraphError::OutOfRange { line: root_line, index: root, joints: joint_count });
    }
    for (e, line) in &edges {
        for idx in [e.from, e.to] {
            if idx >= joint_count {
                return Err(GraphError::OutOfRange {
                    line: *line,
                    index: idx,
                    joints: joint_count,
                });
            }
        }
    }
    Ok(SkeletonGraph { names, root, edges: edges.into_iter().map(|(e, _)| e).collect() })
}

/// Parses and fully validates text as a graph config. Degree caps are
/// profile-dependent, so only structural faults (cycles, unreachable joints)
/// reject here.
pub fn load_graph_text(text: &str) -> Result<SkeletonGraph, GraphError> {
    let g = parse_graph(text)?;
    let report = g.validate(DegreeProfile::Extended);
    for issue in report.issues {
        match issue {
            Issue::Cycle { .. } | Issue::Unreachable { .. } => {
                return Err(GraphError::Invalid(issue))
            }
            Issue::DegreeCap { .. } => {}
        }
    }
    Ok(g)
}

pub fn load_graph(path: &Path) -> Result<SkeletonGraph, GraphError> {
    load_graph_text(&std::fs::read_to_string(path)?)
}

/// Deterministic topological schedule: among ready joints, the smallest index
/// goes first. Panics on a cyclic graph; loaders reject those.
pub fn pass_order(g: &SkeletonGraph, direction: Direction) -> PassOrder {
    let j = g.joint_count();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); j];
    for e in g.edges() {
        match direction {
            Direction::Forward => preds[e.to].push(e.from),
            Direction::Backward => preds[e.from].push(e.to),
        }
    }
    let mut remaining: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut emitted = vec![false; j];
    let mut sequence = Vec::with_capacity(j);
    for _ in 0..j {
        let next = (0..j)
            .find(|&v| !emitted[v] && remaining[v] == 0)
            .expect("pass_order on cyclic graph");
        emitted[next] = true;
        sequence.push(next);
        for (v, p) in preds.iter().enumerate() {
            if !emitted[v] {
                remaining[v] -= p.iter().filter(|&&u| u == next).count();
            }
        }
    }
    PassOrder { direction, sequence, preds }
}

/// Which recurrent passes a wiring runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassPolicy {
    ForwardOnly,
    Bidirectional,
}

/// A graph plus the pass policy it is meant to run under.
#[derive(Debug, Clone, PartialEq)]
pub struct Wiring {
    pub graph: SkeletonGraph,
    pub passes: PassPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionKind {
    SimpleSequence,
    PhysicalOnly,
    SymmetricalOnly,
    GraphicalForwardOnly,
    Bidirectional,
    Extended,
}

impl ConnectionKind {
    pub const ALL: [ConnectionKind; 6] = [
        ConnectionKind::SimpleSequence,
        ConnectionKind::PhysicalOnly,
        ConnectionKind::SymmetricalOnly,
        ConnectionKind::GraphicalForwardOnly,
        ConnectionKind::Bidirectional,
        ConnectionKind::Extended,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectionKind::SimpleSequence => "simple_sequence",
            ConnectionKind::PhysicalOnly => "physical",
            ConnectionKind::SymmetricalOnly => "symmetrical",
            ConnectionKind::GraphicalForwardOnly => "graphical_forward_only",
            ConnectionKind::Bidirectional => "bidirectional",
            ConnectionKind::Extended => "extended",
        }
    }

    pub fn parse(token: &str) -> Option<ConnectionKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == token)
    }
}

/// Builds the connection-ablation wiring for `kind` on top of `g`.
///
/// Filter variants keep the root and drop edges; a filtered graph may leave
/// joints without context (empty N_j), which the recurrent sweep treats as a
/// zero context map. `Extended` only accepts the shipped defaults, since the
/// densified link sets are topology-specific config data.
pub fn variant(g: &SkeletonGraph, kind: ConnectionKind) -> Result<Wiring, GraphError> {
    let filtered = |keep: EdgeKind, passes: PassPolicy| -> Wiring {
        Wiring {
            graph: SkeletonGraph {
                names: g.names.clone(),
                root: g.root,
                edges: g.edges.iter().copied().filter(|e| e.kind == keep).collect(),
            },
            passes,
        }
    };
    Ok(match kind {
        ConnectionKind::SimpleSequence => {
            let edges = (0..g.joint_count().saturating_sub(1))
                .map(|i| Edge { from: i, to: i + 1, kind: EdgeKind::Physical })
                .collect();
            Wiring {
                graph: SkeletonGraph { names: g.names.clone(), root: 0, edges },
                passes: PassPolicy::ForwardOnly,
            }
        }
        ConnectionKind::PhysicalOnly => filtered(EdgeKind::Physical, PassPolicy::ForwardOnly),
        ConnectionKind::SymmetricalOnly => {
            filtered(EdgeKind::Symmetrical, PassPolicy::ForwardOnly)
        }
        ConnectionKind::GraphicalForwardOnly => {
            Wiring { graph: g.clone(), passes: PassPolicy::ForwardOnly }
        }
        ConnectionKind::Bidirectional => {
            Wiring { graph: g.clone(), passes: PassPolicy::Bidirectional }
        }
        ConnectionKind::Extended => {
            let base = shipped::extended_counterpart(g).ok_or(GraphError::UnknownVariantBase)?;
            Wiring { graph: base, passes: PassPolicy::Bidirectional }
        }
    })
}

/// Graphs compiled into the binary. All are stored in canonical config form.
pub mod shipped {
    use super::{load_graph_text, SkeletonGraph};

    pub const BODY16: &str = include_str!("../graphs/body16.graph");
    pub const BODY16_EXTENDED: &str = include_str!("../graphs/body16_extended.graph");
    pub const HAND21: &str = include_str!("../graphs/hand21.graph");
    pub const HAND21_EXTENDED: &str = include_str!("../graphs/hand21_extended.graph");
    pub const FIGURE7: &str = include_str!("../graphs/figure7.graph");

    pub const NAMES: [&str; 5] =
        ["body16", "body16_extended", "hand21", "hand21_extended", "figure7"];

    pub fn by_name(name: &str) -> Option<SkeletonGraph> {
        let text = match name {
            "body16" => BODY16,
            "body16_extended" => BODY16_EXTENDED,
            "hand21" => HAND21,
            "hand21_extended" => HAND21_EXTENDED,
            "figure7" => FIGURE7,
            _ => return None,
        };
        Some(load_graph_text(text).expect("shipped graphs are valid"))
    }

    /// The densified twin of a shipped default graph, if `g` is one.
    pub(super) fn extended_counterpart(g: &SkeletonGraph) -> Option<SkeletonGraph> {
        for (base, ext) in [("body16", "body16_extended"), ("hand21", "hand21_extended")] {
            if by_name(base).as_ref() == Some(g) {
                return by_name(ext);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain3() -> SkeletonGraph {
        parse_graph(
            "joint 0 a\njoint 1 b\njoint 2 c\nroot 0\nedge 0 1 physical\nedge 1 2 physical\n",
        )
        .unwrap()
    }

    #[test]
    fn chain_orders_both_ways() {
        let g = chain3();
        let fwd = pass_order(&g, Direction::Forward);
        assert_eq!(fwd.sequence, vec![0, 1, 2]);
        assert_eq!(fwd.preds[1], vec![0]);
        let bwd = pass_order(&g, Direction::Backward);
        assert_eq!(bwd.sequence, vec![2, 1, 0]);
        assert_eq!(bwd.preds[1], vec![2]);
    }

    #[test]
    fn self_loop_rejected() {
        let err = parse_graph("joint 0 a\nroot 0\nedge 0 0 physical\n").unwrap_err();
        assert!(matches!(err, GraphError::SelfLoop { line: 3, joint: 0 }));
    }

    #[test]
    fn out_of_range_names_line() {
        let err =
            load_graph_text("joint 0 a\njoint 1 b\nroot 0\nedge 0 5 physical\n").unwrap_err();
        assert!(matches!(err, GraphError::OutOfRange { line: 4, index: 5, joints: 2 }));
    }

    #[test]
    fn cycle_rejected_and_named() {
        let text = "joint 0 a\njoint 1 b\njoint 2 c\nroot 0\n\
                    edge 0 1 physical\nedge 1 2 physical\nedge 2 1 physical\n";
        let err = load_graph_text(text).unwrap_err();
        match err {
            GraphError::Invalid(Issue::Cycle { path }) => {
                assert_eq!(path.first(), path.last());
                assert!(path.contains(&1) && path.contains(&2));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_rejected() {
        let text = "joint 0 a\njoint 1 b\njoint 2 c\nroot 0\nedge 0 1 physical\n";
        let err = load_graph_text(text).unwrap_err();
        assert!(matches!(err, GraphError::Invalid(Issue::Unreachable { .. })));
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let g = parse_graph(
            "# heading\njoint 0 a # trailing\n\njoint 1 b\nroot 0\nedge 0 1 physical\n",
        )
        .unwrap();
        assert_eq!(g.joint_count(), 2);
        assert_eq!(g.names()[0], "a");
    }

    #[test]
    fn shipped_hand21_degree_profile() {
        let g = shipped::by_name("hand21").unwrap();
        assert_eq!(g.joint_count(), 21);
        let deg = g.degrees();
        assert_eq!(deg[0], 5, "wrist carries all five finger chains");
        for (j, &d) in deg.iter().enumerate().skip(1) {
            assert!(d <= 4, "joint {j} has degree {d}");
        }
        assert!(g.validate(DegreeProfile::Default).is_ok());
    }

    #[test]
    fn shipped_body16_is_dag_both_ways() {
        let g = shipped::by_name("body16").unwrap();
        assert_eq!(g.joint_count(), 16);
        // Topological-sort oracle: simulate the schedule and require every
        // predecessor to be emitted before its consumer.
        for dir in [Direction::Forward, Direction::Backward] {
            let order = pass_order(&g, dir);
            let mut seen = vec![false; 16];
            for &j in &order.sequence {
                for &p in &order.preds[j] {
                    assert!(seen[p], "{dir:?}: joint {j} scheduled before pred {p}");
                }
                seen[j] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn shipped_body16_has_merge_joint() {
        let g = shipped::by_name("body16").unwrap();
        let fwd = pass_order(&g, Direction::Forward);
        assert!(
            fwd.preds.iter().any(|p| p.len() >= 2),
            "forward pass must merge at least two chains somewhere"
        );
    }

    #[test]
    fn forward_and_backward_preds_are_transposes() {
        for name in shipped::NAMES {
            let g = shipped::by_name(name).unwrap();
            let fwd = pass_order(&g, Direction::Forward);
            let bwd = pass_order(&g, Direction::Backward);
            for j in 0..g.joint_count() {
                for &p in &fwd.preds[j] {
                    assert!(bwd.preds[p].contains(&j), "{name}: edge {p}->{j}");
                }
                for &s in &bwd.preds[j] {
                    assert!(fwd.preds[s].contains(&j), "{name}: edge {j}->{s}");
                }
            }
        }
    }

    #[test]
    fn simple_sequence_is_a_short_chain() {
        let g = shipped::by_name("hand21").unwrap();
        let w = variant(&g, ConnectionKind::SimpleSequence).unwrap();
        assert_eq!(w.graph.edges().len(), 20);
        assert_eq!(w.passes, PassPolicy::ForwardOnly);
        for (j, &d) in w.graph.degrees().iter().enumerate() {
            assert!(d <= 2, "joint {j} degree {d}");
        }
    }

    #[test]
    fn filter_variants_count_and_idempotence() {
        let g = shipped::by_name("body16").unwrap();
        let physical = variant(&g, ConnectionKind::PhysicalOnly).unwrap();
        let expect = g.edges().iter().filter(|e| e.kind == EdgeKind::Physical).count();
        assert_eq!(physical.graph.edges().len(), expect);
        let twice = variant(&physical.graph, ConnectionKind::PhysicalOnly).unwrap();
        assert_eq!(twice.graph, physical.graph);

        let sym = variant(&g, ConnectionKind::SymmetricalOnly).unwrap();
        let sym2 = variant(&sym.graph, ConnectionKind::SymmetricalOnly).unwrap();
        assert_eq!(sym2.graph, sym.graph);
    }

    #[test]
    fn extended_variants_hit_degree_targets() {
        let body = shipped::by_name("body16").unwrap();
        let ext = variant(&body, ConnectionKind::Extended).unwrap();
        assert_eq!(ext.graph.degrees().iter().max(), Some(&7));

        let hand = shipped::by_name("hand21").unwrap();
        let ext = variant(&hand, ConnectionKind::Extended).unwrap();
        assert_eq!(ext.graph.degrees().iter().max(), Some(&8));

        let stranger = chain3();
        assert!(matches!(
            variant(&stranger, ConnectionKind::Extended),
            Err(GraphError::UnknownVariantBase)
        ));
    }

    #[test]
    fn extended_hand_passes_only_extended_profile() {
        // Degree-count oracle: recount links by scanning edges directly.
        let g = shipped::by_name("hand21_extended").unwrap();
        let mut oracle = vec![0usize; g.joint_count()];
        for e in g.edges() {
            oracle[e.from] += 1;
            oracle[e.to] += 1;
        }
        assert_eq!(oracle, g.degrees());
        assert!(g.validate(DegreeProfile::Extended).is_ok());
        let report = g.validate(DegreeProfile::Default);
        assert!(!report.is_ok());
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, Issue::DegreeCap { joint: 6, degree: 5, cap: 4 })));
    }

    #[test]
    fn validation_reports_injected_cycle() {
        let mut text = shipped::BODY16.to_string();
        text.push_str("edge 3 2 extra\n");
        let g = parse_graph(&text).unwrap();
        let report = g.validate(DegreeProfile::Default);
        assert!(report.issues.iter().any(|i| match i {
            Issue::Cycle { path } => path.contains(&2) && path.contains(&3),
            _ => false,
        }));
    }

    #[test]
    fn shipped_files_are_canonical() {
        for (name, text) in [
            ("body16", shipped::BODY16),
            ("body16_extended", shipped::BODY16_EXTENDED),
            ("hand21", shipped::HAND21),
            ("hand21_extended", shipped::HAND21_EXTENDED),
            ("figure7", shipped::FIGURE7),
        ] {
            let g = load_graph_text(text).unwrap();
            assert_eq!(g.to_config_text(), text, "{name} not canonical");
        }
    }

    proptest! {
        // Relabeling joints keeps the schedule isomorphic: preds map
        // elementwise under the permutation and the permuted sequence is
        // still a valid schedule.
        #[test]
        fn relabeling_gives_isomorphic_pass_orders(keys in proptest::collection::vec(0u64.., 16)) {
            let mut perm: Vec<usize> = (0..16).collect();
            perm.sort_by_key(|&i| (keys[i], i));
            let g = shipped::by_name("body16").unwrap();
            let relabeled_text = {
                let mut lines = Vec::new();
                let mut joints: Vec<(usize, &str)> = g
                    .names()
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (perm[i], n.as_str()))
                    .collect();
                joints.sort_by_key(|&(i, _)| i);
                for (i, n) in joints {
                    lines.push(format!("joint {i} {n}"));
                }
                lines.push(format!("root {}", perm[g.root()]));
                for e in g.edges() {
                    lines.push(format!("edge {} {} {}", perm[e.from], perm[e.to], e.kind.as_str()));
                }
                lines.join("\n") + "\n"
            };
            let h = load_graph_text(&relabeled_text).unwrap();
            for dir in [Direction::Forward, Direction::Backward] {
                let og = pass_order(&g, dir);
                let oh = pass_order(&h, dir);
                for j in 0..16 {
                    let mapped: Vec<usize> = og.preds[j].iter().map(|&p| perm[p]).collect();
                    prop_assert_eq!(&oh.preds[perm[j]], &mapped);
                }
                let mut seen = vec![false; 16];
                for &j in &oh.sequence {
                    for &p in &oh.preds[j] {
                        prop_assert!(seen[p]);
                    }
                    seen[j] = true;
                }
            }
        }
    }
}
