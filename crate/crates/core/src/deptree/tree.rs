use crate::error::{Error, Result};

/// Rooted dependency tree over the tokens of one sentence.
///
/// `parent[i]` is the head of token `i`; `None` marks the single root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    root: usize,
}

impl DepTree {
    /// Checks that `parent` describes a single-rooted acyclic tree.
    pub fn validate(parent: &[Option<usize>]) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::Tree("empty sentence".into()));
        }
        if let Some((i, h)) = parent
            .iter()
            .enumerate()
            .find_map(|(i, p)| p.filter(|&h| h >= n).map(|h| (i, h)))
        {
            return Err(Error::Tree(format!("token {i} has out-of-range head {h}")));
        }

        // 0 = unvisited, 1 = on the current walk, 2 = resolved
        let mut state = vec![0u8; n];
        let mut depth = vec![0usize; n];
        for start in 0..n {
            let mut walk = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => return Err(Error::Tree(format!("cycle through token {cur}"))),
                    _ => {}
                }
                state[cur] = 1;
                walk.push(cur);
                match parent[cur] {
                    Some(h) => cur = h,
                    None => {
                        depth[cur] = 0;
                        state[cur] = 2;
                        walk.pop();
                        break;
                    }
                }
            }
            for &node in walk.iter().rev() {
                depth[node] = depth[parent[node].expect("non-root")] + 1;
                state[node] = 2;
            }
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        match roots.len() {
            0 => return Err(Error::Tree("no root".into())),
            1 => {}
            _ => return Err(Error::Tree(format!("multiple roots at {roots:?}"))),
        }

        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(h) = p {
                children[*h].push(i);
            }
        }
        Ok(DepTree {
            parent: parent.to_vec(),
            depth,
            children,
            root: roots[0],
        })
    }

    /// From CoNLL-U style heads: 1-based, `0` for the root.
    pub fn from_heads(heads: &[usize]) -> Result<Self> {
        let parent: Vec<Option<usize>> = heads.iter().map(|&h| h.checked_sub(1)).collect();
        Self::validate(&parent)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Deepest node that is an ancestor of both `a` and `b` (nodes are their
    /// own ancestors).
    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("deeper node has a parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("deeper node has a parent");
        }
        while a != b {
            a = self.parent[a].expect("non-root");
            b = self.parent[b].expect("non-root");
        }
        a
    }

    /// All nodes in the subtree rooted at `node`, in ascending index order.
    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend_from_slice(&self.children[n]);
        }
        out.sort_unstable();
        out
    }

    /// Nodes on the tree path from `a` to `b`, in ascending index order.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let top = self.lca(a, b);
        let mut out = vec![top];
        for mut cur in [a, b] {
            while cur != top {
                out.push(cur);
                cur = self.parent[cur].expect("below lca");
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}
