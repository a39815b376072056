use std::collections::{HashMap, HashSet};

use super::{Inner, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Accumulates `d self / d leaf` into every tracked leaf reachable from
    /// `self`. `self` must hold exactly one element. Leaf gradients add onto
    /// whatever is already stored; call `zero_grad` between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.tracks_grad() {
            return Ok(());
        }

        let order = topo_order(self);
        let mut pending: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        pending.insert(self.ptr(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.ptr()) else {
                continue;
            };
            match t.node() {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let grads = (node.backward)(&g, &node.parents);
                    debug_assert_eq!(grads.len(), node.parents.len(), "{}", node.op);
                    for (parent, pg) in node.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.tracks_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{} grad size", node.op);
                        match pending.get_mut(&parent.ptr()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.ptr(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tracked tensors reachable from `root`, parents before children.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen: HashSet<*const Inner> = HashSet::new();
    // (tensor, children_pushed)
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.ptr()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.node() {
            for p in node.parents.iter().rev() {
                if p.tracks_grad() && !seen.contains(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::param(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gives_two_x() {
        let v = vec![0.5, -1.0, 2.0, 3.0];
        let x = Tensor::param(&[4], v.clone()).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let expect: Vec<f64> = v.iter().map(|a| 2.0 * a).collect();
        assert_eq!(x.grad().unwrap(), expect);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        // y = x*2 + x*3  ->  dy/dx = 5
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.scale(2.0).add(&x.scale(3.0)).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0; 3]);
    }
}
