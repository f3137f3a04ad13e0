//! Synchronous average consensus over a [`SensorNetwork`].
//!
//! Each iteration every node broadcasts its current value once and replaces
//! it with the weighted combination of its own and its neighbors' values.
//! The update is evaluated node by node from neighbor lists, which is the
//! dense product `W a` restricted to the graph.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::SensorNetwork;

/// Broadcast counts, the energy proxy for distributed computation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransmissionLedger {
    per_node_broadcasts: Vec<u64>,
}

impl TransmissionLedger {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            per_node_broadcasts: vec![0; n_nodes],
        }
    }

    pub fn per_node_broadcasts(&self) -> &[u64] {
        &self.per_node_broadcasts
    }

    pub fn total_broadcasts(&self) -> u64 {
        self.per_node_broadcasts.iter().sum()
    }

    fn record_round(&mut self) {
        for c in &mut self.per_node_broadcasts {
            *c += 1;
        }
    }

    /// Adds another ledger's counts into this one.
    pub fn merge(&mut self, other: &TransmissionLedger) -> Result<()> {
        if other.per_node_broadcasts.len() != self.per_node_broadcasts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.per_node_broadcasts.len(),
                actual: other.per_node_broadcasts.len(),
            });
        }
        for (a, b) in self
            .per_node_broadcasts
            .iter_mut()
            .zip(&other.per_node_broadcasts)
        {
            *a += b;
        }
        Ok(())
    }
}

fn check_dims(network: &SensorNetwork, values: &[f64], ledger: &TransmissionLedger) -> Result<()> {
    let n = network.n_nodes();
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: values.len(),
        });
    }
    if ledger.per_node_broadcasts.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: ledger.per_node_broadcasts.len(),
        });
    }
    Ok(())
}

fn iterate_unchecked(network: &SensorNetwork, values: &[f64], out: &mut [f64]) {
    let w = network.weights();
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = w[(k, k)] * values[k];
        for &j in network.neighbors(k) {
            acc += w[(k, j)] * values[j];
        }
        *slot = acc;
    }
}

/// One consensus round: `a_k <- W_kk a_k + sum_{j in N_k} W_kj a_j`.
pub fn consensus_iterate(
    network: &SensorNetwork,
    values: &[f64],
    ledger: &mut TransmissionLedger,
) -> Result<Vec<f64>> {
    check_dims(network, values, ledger)?;
    let mut out = vec![0.0; values.len()];
    iterate_unchecked(network, values, &mut out);
    ledger.record_round();
    Ok(out)
}

/// Runs `n_it` consensus rounds and returns each node's estimate `N a_k`
/// of the network-wide sum. The node count is treated as known
/// configuration.
pub fn spatial_sum(
    network: &SensorNetwork,
    values: &[f64],
    n_it: usize,
    ledger: &mut TransmissionLedger,
) -> Result<Vec<f64>> {
    if n_it == 0 {
        return Err(Error::InvalidParameter(
            "spatial sum needs at least one iteration".into(),
        ));
    }
    check_dims(network, values, ledger)?;
    let mut current = values.to_vec();
    let mut next = vec![0.0; values.len()];
    for _ in 0..n_it {
        iterate_unchecked(network, &current, &mut next);
        ledger.record_round();
        std::mem::swap(&mut current, &mut next);
    }
    let n = values.len() as f64;
    Ok(current.into_iter().map(|a| n * a).collect())
}

/// Consensus states `a(0), ..., a(n_it)` for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTrace {
    pub states: Vec<Vec<f64>>,
}

impl ConsensusTrace {
    pub fn run(network: &SensorNetwork, initial: &[f64], n_it: usize) -> Result<Self> {
        let mut ledger = TransmissionLedger::new(network.n_nodes());
        let mut states = Vec::with_capacity(n_it + 1);
        states.push(initial.to_vec());
        for t in 0..n_it {
            let next = consensus_iterate(network, &states[t], &mut ledger)?;
            states.push(next);
        }
        Ok(Self { states })
    }

    /// `||a(t) - mean(a(0)) 1||_2`.
    pub fn l2_error(&self, t: usize) -> f64 {
        let init = &self.states[0];
        let avg = init.iter().sum::<f64>() / init.len() as f64;
        self.states[t]
            .iter()
            .map(|a| (a - avg).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// CSV with columns `t, node_0, ..., node_{N-1}, consensus_error_l2`.
    pub fn to_csv(&self, metadata: &str) -> String {
        let n = self.states[0].len();
        let mut out = String::new();
        if !metadata.is_empty() {
            writeln!(out, "# {metadata}").unwrap();
        }
        out.push('t');
        for k in 0..n {
            write!(out, ",node_{k}").unwrap();
        }
        out.push_str(",consensus_error_l2\n");
        for (t, state) in self.states.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for v in state {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", self.l2_error(t)).unwrap();
        }
        out
    }
}
