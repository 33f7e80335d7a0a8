//! Sparse matrices, LIBSVM files, graphs and synthetic fixtures.

mod csr;
mod gen;
mod graph;
mod libsvm;

pub use csr::CsrMatrix;
pub use gen::{gen_diag_dominant, gen_jacobi_system, gen_logistic, gen_sparse_logistic, LinearSystem};
pub use graph::{gen_graph, parse_edge_list, read_edge_list, write_edge_list, GraphKind, GraphSpec};
pub use libsvm::{parse_libsvm, read_libsvm, write_libsvm, write_libsvm_file, LabeledDataset};

use crate::error::{Error, Result};
use crate::fixpoint::BlockLayout;

/// Splits `n` features into `max(1, round(n / target))` contiguous blocks
/// whose sizes differ by at most one, larger blocks first.
pub fn partition_blocks(n: usize, target: usize) -> Result<BlockLayout> {
    if n == 0 || target == 0 {
        return Err(Error::invalid("partition needs n >= 1 and target >= 1"));
    }
    let k = ((n + target / 2) / target).clamp(1, n);
    let base = n / k;
    let extra = n % k;
    let sizes: Vec<usize> = (0..k).map(|b| base + usize::from(b < extra)).collect();
    BlockLayout::from_sizes(&sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        assert_eq!(partition_blocks(100, 50).unwrap().sizes(), vec![50, 50]);
        assert_eq!(partition_blocks(101, 50).unwrap().sizes(), vec![51, 50]);
        let l = partition_blocks(47236, 50).unwrap();
        assert_eq!(l.num_blocks(), 945);
        assert!(l.sizes().iter().all(|s| (49..=51).contains(s)));
        let mut covered = vec![0u8; 47236];
        for b in 0..l.num_blocks() {
            for j in l.block(b) {
                covered[j] += 1;
            }
        }
        assert!(covered.iter().all(|c| *c == 1));
        assert_eq!(partition_blocks(3, 50).unwrap().sizes(), vec![3]);
    }

    proptest! {
        #[test]
        fn partition_is_complete(n in 1usize..5000, target in 1usize..200) {
            let l = partition_blocks(n, target).unwrap();
            prop_assert_eq!(l.dim(), n);
            let s = l.sizes();
            let (lo, hi) = (s.iter().min().unwrap(), s.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            let mut next = 0;
            for b in 0..l.num_blocks() {
                prop_assert_eq!(l.block(b).start, next);
                next = l.block(b).end;
            }
        }
    }
}
