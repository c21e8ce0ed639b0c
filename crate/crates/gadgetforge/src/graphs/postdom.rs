//! Post-dominator tree and control-dependence computation.
//!
//! Post-dominance is dominance on the reverse CFG; the immediate-dominator
//! fixpoint follows Cooper, Harvey and Kennedy's "A Simple, Fast Dominance
//! Algorithm". Control dependences come from the dominance-frontier
//! criterion: for a CFG edge (a, b) where b does not post-dominate a, every
//! node from b up the post-dominator tree to (but excluding) ipdom(a) is
//! control dependent on a.

use super::cfg::Cfg;

/// Immediate post-dominator per block (`ipdom[exit] == exit`).
/// Blocks that cannot reach the exit get `usize::MAX`.
pub fn postdominators(cfg: &Cfg) -> Vec<usize> {
    let n = cfg.blocks.len();
    let preds: Vec<Vec<usize>> = (0..n)
        .map(|b| cfg.successors(b).map(|e| e.dst).collect()) // reverse graph preds = succs
        .collect();
    let succs: Vec<Vec<usize>> = (0..n)
        .map(|b| cfg.predecessors(b).map(|e| e.src).collect())
        .collect();

    // postorder of the reverse CFG starting at exit
    let mut postorder = Vec::with_capacity(n);
    let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
    let mut stack = vec![(cfg.exit, 0usize)];
    state[cfg.exit] = 1;
    while let Some(&mut (node, ref mut child)) = stack.last_mut() {
        if *child < succs[node].len() {
            let next = succs[node][*child];
            *child += 1;
            if state[next] == 0 {
                state[next] = 1;
                stack.push((next, 0));
            }
        } else {
            state[node] = 2;
            postorder.push(node);
            stack.pop();
        }
    }

    let mut po_number = vec![usize::MAX; n];
    for (i, &b) in postorder.iter().enumerate() {
        po_number[b] = i;
    }

    let mut idom = vec![usize::MAX; n];
    idom[cfg.exit] = cfg.exit;

    let intersect = |idom: &[usize], po: &[usize], mut a: usize, mut b: usize| -> usize {
        while a != b {
            while po[a] < po[b] {
                a = idom[a];
            }
            while po[b] < po[a] {
                b = idom[b];
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &b in postorder.iter().rev() {
            if b == cfg.exit {
                continue;
            }
            let mut new_idom = usize::MAX;
            for &p in &preds[b] {
                if idom[p] == usize::MAX {
                    continue;
                }
                new_idom = if new_idom == usize::MAX {
                    p
                } else {
                    intersect(&idom, &po_number, new_idom, p)
                };
            }
            if new_idom != usize::MAX && idom[b] != new_idom {
                idom[b] = new_idom;
                changed = true;
            }
        }
    }
    idom
}

/// Control-dependence pairs `(controller_block, controlled_block)`.
pub fn control_dependences(cfg: &Cfg) -> Vec<(usize, usize)> {
    let ipdom = postdominators(cfg);
    let mut deps = Vec::new();
    for e in &cfg.edges {
        let (a, b) = (e.src, e.dst);
        if ipdom[a] == usize::MAX || ipdom[b] == usize::MAX {
            continue;
        }
        let stop = ipdom[a];
        let mut runner = b;
        while runner != stop {
            if runner != a {
                deps.push((a, runner));
            }
            if runner == ipdom[runner] {
                break; // reached the exit without meeting stop
            }
            runner = ipdom[runner];
        }
    }
    deps.sort();
    deps.dedup();
    deps
}
