//! Detection graphs: each node either stops or hands the frame to one of its
//! downstream neighbors. Solved by one backward pass in post-order.
//!
//! Node indices are 0-based and the root is node 0. Stopping at a node idles
//! every node reachable downstream of it, each counted once.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cascade::{expectation, terminal_table, tie_tolerance, StageSpec};
use crate::error::{Error, Result};
use crate::model::{BeliefGrid, BeliefTable};
use crate::robust::{posterior_bounds, BeliefInterval, RobustBand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionGraph {
    pub nodes: Vec<StageSpec>,
    /// Directed edges `(from, to)`.
    pub edges: Vec<(usize, usize)>,
}

/// Validated adjacency of a [`DetectionGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub neighbors: Vec<Vec<usize>>,
    pub parents: Vec<Vec<usize>>,
    pub order: Vec<usize>,
    /// Nodes reachable from each node, excluding itself.
    pub downstream: Vec<BTreeSet<usize>>,
}

impl DetectionGraph {
    pub fn new(nodes: Vec<StageSpec>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self { nodes, edges };
        g.topology()?;
        Ok(g)
    }

    /// A chain `0 → 1 → … → K-1`.
    pub fn path(nodes: Vec<StageSpec>) -> Self {
        let edges = (1..nodes.len()).map(|i| (i - 1, i)).collect();
        Self { nodes, edges }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn topology(&self) -> Result<Topology> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(Error::Graph(format!("edge ({a}, {b}) references a missing node")));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at node {a}")));
            }
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                parents[b].push(a);
            }
        }
        for v in neighbors.iter_mut().chain(parents.iter_mut()) {
            v.sort_unstable();
        }
        let order = post_order_of(&neighbors)?;
        let mut downstream = vec![BTreeSet::new(); n];
        for &v in &order {
            let mut set = BTreeSet::new();
            for &m in &neighbors[v] {
                set.insert(m);
                set.extend(downstream[m].iter().copied());
            }
            downstream[v] = set;
        }
        for (i, st) in self.nodes.iter().enumerate() {
            if !(st.on_cost >= 0.0 && st.off_cost >= 0.0) {
                return Err(Error::Input(format!("node {i}: costs must be nonnegative")));
            }
            if i > 0 && st.off_cost >= st.on_cost {
                return Err(Error::Input(format!("node {i}: off-cost must be below on-cost")));
            }
            st.uncertainty.validate()?;
        }
        Ok(Topology {
            neighbors,
            parents,
            order,
            downstream,
        })
    }

    pub fn post_order(&self) -> Result<Vec<usize>> {
        Ok(self.topology()?.order)
    }

    /// Idle energy charged when node `i` stops.
    pub fn downstream_off_cost(&self, topo: &Topology, i: usize) -> f64 {
        topo.downstream[i].iter().map(|&j| self.nodes[j].off_cost).sum()
    }
}

/// Depth-first post-order from node 0, neighbors in ascending order.
fn post_order_of(neighbors: &[Vec<usize>]) -> Result<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    let n = neighbors.len();
    let mut mark = vec![Mark::White; n];
    let mut order = Vec::with_capacity(n);
    // (node, next neighbor position)
    let mut stack = vec![(0usize, 0usize)];
    mark[0] = Mark::Gray;
    while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
        if let Some(&m) = neighbors[v].get(*pos) {
            *pos += 1;
            match mark[m] {
                Mark::White => {
                    mark[m] = Mark::Gray;
                    stack.push((m, 0));
                }
                Mark::Gray => return Err(Error::Graph(format!("cycle through nodes {v} and {m}"))),
                Mark::Black => {}
            }
        } else {
            mark[v] = Mark::Black;
            order.push(v);
            stack.pop();
        }
    }
    if let Some(i) = mark.iter().position(|&m| m == Mark::White) {
        return Err(Error::Graph(format!("node {i} is unreachable from the root")));
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeDecision {
    Stop,
    Route(usize),
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePolicy {
    pub value: BeliefTable,
    /// First grid belief at which the node continues (or declares positive).
    #[serde(with = "crate::serde_ext::f64_inf")]
    pub threshold: f64,
    /// Chosen neighbor at each grid belief in the continue region.
    pub routes: Vec<Option<usize>>,
    /// Posterior interval after this node's feature.
    pub bounds: BeliefInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPolicy {
    pub nodes: Vec<NodePolicy>,
    pub root_value: f64,
    pub lambda: f64,
    pub prior: f64,
    pub miss_cost: f64,
    pub fa_cost: f64,
}

/// Expected value of routing to each neighbor, in neighbor order.
fn route_values(
    graph: &DetectionGraph,
    tables: &[Option<BeliefTable>],
    nbrs: &[usize],
    lambda: f64,
    b: f64,
) -> Vec<f64> {
    nbrs.iter()
        .map(|&m| {
            let t = tables[m].as_ref().expect("neighbor solved before its parents");
            lambda * graph.nodes[m].on_cost + expectation(&graph.nodes[m].model, t, b)
        })
        .collect()
}

/// Index of the smallest value; near-ties go to the earliest (lowest id).
fn argmin(vals: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in vals.iter().enumerate().skip(1) {
        if v < vals[best] - tie_tolerance(vals[best]) {
            best = k;
        }
    }
    best
}

pub fn solve_graph(
    graph: &DetectionGraph,
    miss_cost: f64,
    fa_cost: f64,
    lambda: f64,
    prior: f64,
    grid: BeliefGrid,
) -> Result<GraphPolicy> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!(
            "lambda {lambda} must be a finite nonnegative number"
        )));
    }
    if !(miss_cost > 0.0 && fa_cost > 0.0) {
        return Err(Error::Input("miss and false-alarm costs must be positive".into()));
    }
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::Input(format!("prior {prior} outside [0, 1]")));
    }
    let topo = graph.topology()?;
    let n = graph.len();
    let mut tables: Vec<Option<BeliefTable>> = vec![None; n];
    let mut thresholds = vec![f64::INFINITY; n];
    let mut routes = vec![Vec::new(); n];

    for &v in &topo.order {
        let nbrs = &topo.neighbors[v];
        if nbrs.is_empty() {
            tables[v] = Some(terminal_table(grid, miss_cost, fa_cost));
            thresholds[v] = fa_cost / (fa_cost + miss_cost);
            routes[v] = vec![None; grid.size()];
            continue;
        }
        let stop_energy = graph.downstream_off_cost(&topo, v);
        let mut stop = Vec::with_capacity(grid.size());
        let mut best = Vec::with_capacity(grid.size());
        for b in grid.points() {
            let vals = route_values(graph, &tables, nbrs, lambda, b);
            let k = argmin(&vals);
            stop.push(miss_cost * b + lambda * stop_energy);
            best.push((vals[k], nbrs[k]));
        }
        let first = (0..grid.size()).find(|&j| best[j].0 <= stop[j] + tie_tolerance(stop[j]));
        let values = (0..grid.size())
            .map(|j| match first {
                Some(f) if j >= f => best[j].0,
                _ => stop[j],
            })
            .collect();
        routes[v] = (0..grid.size())
            .map(|j| match first {
                Some(f) if j >= f => Some(best[j].1),
                _ => None,
            })
            .collect();
        thresholds[v] = first.map_or(f64::INFINITY, |j| grid.point(j));
        tables[v] = Some(BeliefTable::new(grid, values)?);
    }

    let bounds = node_bounds(graph, &topo, prior);
    let tables: Vec<BeliefTable> = tables.into_iter().map(|t| t.expect("every node solved")).collect();
    let root_value = lambda * graph.nodes[0].on_cost + expectation(&graph.nodes[0].model, &tables[0], prior);
    let nodes = tables
        .into_iter()
        .zip(thresholds)
        .zip(routes)
        .zip(bounds)
        .map(|(((value, threshold), routes), bounds)| NodePolicy {
            value,
            threshold,
            routes,
            bounds,
        })
        .collect();
    Ok(GraphPolicy {
        nodes,
        root_value,
        lambda,
        prior,
        miss_cost,
        fa_cost,
    })
}

/// Posterior interval after each node: the union of the parents' intervals
/// pushed through the node's likelihood-ratio range.
pub fn node_bounds(graph: &DetectionGraph, topo: &Topology, prior: f64) -> Vec<BeliefInterval> {
    let n = graph.len();
    let mut out: Vec<Option<BeliefInterval>> = vec![None; n];
    for &v in topo.order.iter().rev() {
        let incoming = incoming_interval(topo, &out, v, prior);
        out[v] = Some(posterior_bounds(incoming, RobustBand::of_model(&graph.nodes[v].model)));
    }
    out.into_iter().map(|b| b.expect("reachable")).collect()
}

fn incoming_interval(topo: &Topology, bounds: &[Option<BeliefInterval>], v: usize, prior: f64) -> BeliefInterval {
    if v == 0 {
        return BeliefInterval::point(prior);
    }
    topo.parents[v]
        .iter()
        .map(|&p| bounds[p].expect("parents precede children in reverse post-order"))
        .reduce(|a, b| a.union(&b))
        .expect("non-root nodes have a parent")
}

impl GraphPolicy {
    pub fn grid(&self) -> BeliefGrid {
        self.nodes[0].value.grid()
    }

    /// Decision at node `v` once its posterior is `pi`.
    pub fn decide(&self, graph: &DetectionGraph, topo: &Topology, v: usize, pi: f64) -> NodeDecision {
        let node = &self.nodes[v];
        let nbrs = &topo.neighbors[v];
        if pi < node.threshold {
            return NodeDecision::Stop;
        }
        if nbrs.is_empty() {
            return NodeDecision::Positive;
        }
        if nbrs.len() == 1 {
            return NodeDecision::Route(nbrs[0]);
        }
        let vals: Vec<f64> = nbrs
            .iter()
            .map(|&m| {
                self.lambda * graph.nodes[m].on_cost + expectation(&graph.nodes[m].model, &self.nodes[m].value, pi)
            })
            .collect();
        NodeDecision::Route(nbrs[argmin(&vals)])
    }
}

/// Decision probabilities of one node over its admissible incoming beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeActivation {
    pub node: usize,
    pub options: Vec<NodeDecision>,
    pub beliefs: Vec<f64>,
    /// `probabilities[k][o]`: probability of `options[o]` at `beliefs[k]`.
    pub probabilities: Vec<Vec<f64>>,
}

/// For every node, the probability of each decision given the incoming belief,
/// over the union of the parents' posterior intervals (the prior for the root).
pub fn graph_activation_probabilities(graph: &DetectionGraph, policy: &GraphPolicy) -> Result<Vec<NodeActivation>> {
    let topo = graph.topology()?;
    let grid = policy.grid();
    let bounds: Vec<Option<BeliefInterval>> = policy.nodes.iter().map(|n| Some(n.bounds)).collect();
    let mut out = Vec::with_capacity(graph.len());
    for v in 0..graph.len() {
        let iv = incoming_interval(&topo, &bounds, v, policy.prior);
        let mut beliefs = vec![iv.lo];
        beliefs.extend(grid.points().filter(|&b| b > iv.lo && b < iv.hi));
        if iv.hi > iv.lo {
            beliefs.push(iv.hi);
        }
        let options: Vec<NodeDecision> = if topo.neighbors[v].is_empty() {
            vec![NodeDecision::Stop, NodeDecision::Positive]
        } else {
            std::iter::once(NodeDecision::Stop)
                .chain(topo.neighbors[v].iter().map(|&m| NodeDecision::Route(m)))
                .collect()
        };
        let model = &graph.nodes[v].model;
        let probabilities = beliefs
            .iter()
            .map(|&b| {
                let mut p = vec![0.0; options.len()];
                for y in 0..model.alphabet_size() {
                    let d = policy.decide(graph, &topo, v, model.posterior(b, y));
                    let k = options.iter().position(|&o| o == d).expect("decision among options");
                    p[k] += model.evidence(b, y);
                }
                p
            })
            .collect();
        out.push(NodeActivation {
            node: v,
            options,
            beliefs,
            probabilities,
        });
    }
    Ok(out)
}
