use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

/// Operation families tracked by the counter.
///
/// Conventions: a multiply-add is 2 FLOPs, an elementwise product or sum is
/// 1 FLOP per output element, nonlinearities and normalization are 1 FLOP per
/// element. Pure data movement (reshape, slicing, concatenation, gathers) is
/// free.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum OpKind {
    MatMul,
    Hadamard,
    Add,
    Scale,
    /// Materializing a broadcast as an outer product with an all-ones vector.
    Broadcast,
    SparseAggregate,
    DepthwiseConv,
    Activation,
    Normalization,
    Reduction,
    Loss,
    Bias,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    total: u64,
    per_op: BTreeMap<OpKind, u64>,
    excluded: BTreeSet<OpKind>,
    phases: Vec<(&'static str, u64)>,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// A counter that ignores bias additions, matching cost formulas that
    /// omit bias terms.
    pub fn without_bias() -> Self {
        Self::new().exclude(OpKind::Bias)
    }

    pub fn exclude(mut self, kind: OpKind) -> Self {
        self.excluded.insert(kind);
        self
    }

    pub fn record(&mut self, kind: OpKind, flops: u64) {
        if self.excluded.contains(&kind) {
            return;
        }
        self.total += flops;
        *self.per_op.entry(kind).or_insert(0) += flops;
        if let Some((_, n)) = self.phases.last_mut() {
            *n += flops;
        }
    }

    /// Starts attributing recorded FLOPs to a new named phase.
    pub fn begin_phase(&mut self, name: &'static str) {
        self.phases.push((name, 0));
    }

    /// FLOPs per phase in the order the phases began. Work recorded before
    /// the first phase is not attributed.
    pub fn phases(&self) -> &[(&'static str, u64)] {
        &self.phases
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, kind: OpKind) -> u64 {
        self.per_op.get(&kind).copied().unwrap_or(0)
    }

    pub fn per_op(&self) -> &BTreeMap<OpKind, u64> {
        &self.per_op
    }

    pub fn reset(&mut self) {
        self.total = 0;
        self.per_op.clear();
        self.phases.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_sum_of_kinds() {
        let mut c = OpCounter::new();
        c.record(OpKind::MatMul, 10);
        c.record(OpKind::Add, 3);
        c.record(OpKind::MatMul, 2);
        assert_eq!(c.total(), 15);
        assert_eq!(c.per_op().values().sum::<u64>(), c.total());
        assert_eq!(c.get(OpKind::MatMul), 12);
    }

    #[test]
    fn excluded_kinds_are_dropped() {
        let mut c = OpCounter::without_bias();
        c.record(OpKind::Bias, 100);
        c.record(OpKind::Add, 1);
        assert_eq!(c.total(), 1);
        assert_eq!(c.get(OpKind::Bias), 0);
    }

    #[test]
    fn phases_split_the_total() {
        let mut c = OpCounter::new();
        c.record(OpKind::Add, 1);
        c.begin_phase("a");
        c.record(OpKind::MatMul, 4);
        c.begin_phase("b");
        c.record(OpKind::Add, 2);
        c.record(OpKind::Scale, 3);
        assert_eq!(c.phases(), &[("a", 4), ("b", 5)]);
        assert_eq!(c.total(), 10);
    }
}
