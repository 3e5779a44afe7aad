use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::autograd::{Graph, NodeId};
use crate::tensor::Tensor;

/// Whether batch norm uses batch statistics (and updates running ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward execution of a model: the recorded graph plus the mapping
/// from parameters to graph leaves.
///
/// Each parameter becomes a single leaf no matter how often it is read, so
/// both Siamese streams accumulate into the same gradient.
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p ParamStore,
    leaves: Vec<Option<NodeId>>,
    mode: Mode,
    running: HashMap<ParamId, Tensor>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode) -> Self {
        Self::with_graph(params, mode, Graph::new())
    }

    pub fn with_graph(params: &'p ParamStore, mode: Mode, graph: Graph) -> Self {
        Session {
            graph,
            params,
            leaves: vec![None; params.len()],
            mode,
            running: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.leaves[id.index()] {
            return node;
        }
        let node = self.graph.leaf(self.params.get(id).clone());
        self.leaves[id.index()] = Some(node);
        node
    }

    /// Leaf already created for `id`, if the forward pass read it.
    pub fn param_node(&self, id: ParamId) -> Option<NodeId> {
        self.leaves[id.index()]
    }

    /// Current value of a running statistic, including updates made earlier
    /// in this session.
    pub fn running(&self, id: ParamId) -> Tensor {
        self.running
            .get(&id)
            .cloned()
            .unwrap_or_else(|| self.params.get(id).clone())
    }

    pub(crate) fn set_running(&mut self, id: ParamId, value: Tensor) {
        self.running.insert(id, value);
    }

    /// Running-statistic updates accumulated by training-mode batch norms.
    pub fn running_updates(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.running.iter().map(|(&id, t)| (id, t))
    }
}
