use crate::error::{Error, Result};
use crate::tensor::{Array, Graph, Var};

/// Scaled dot-product attention of one query row over `n` key/value rows:
/// `softmax(q K^T / sqrt(d)) V`.
pub fn attention(g: &mut Graph, query: Var, keys: Var, values: Var) -> Result<Var> {
    let (kn, kd) = g.value(keys).dims2()?;
    let (vn, _) = g.value(values).dims2()?;
    let (_, qd) = g.value(query).dims2()?;
    if kn == 0 || g.value(keys).is_empty() {
        return Err(Error::invalid("attention over an empty key set"));
    }
    if kn != vn {
        return Err(Error::Shape {
            op: "attention keys/values",
            lhs: g.shape(keys).to_vec(),
            rhs: g.shape(values).to_vec(),
        });
    }
    if kd != qd {
        return Err(Error::Shape {
            op: "attention query/keys",
            lhs: g.shape(query).to_vec(),
            rhs: g.shape(keys).to_vec(),
        });
    }
    let kt = g.transpose(keys)?;
    let scores = g.matmul(query, kt)?;
    let scores = g.scale(scores, 1.0 / (kd as f64).sqrt())?;
    let weights = g.softmax(scores)?;
    g.matmul(weights, values)
}

/// Graph-free convenience for a single query vector.
pub fn attend(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::invalid("attention over an empty key set"));
    }
    let mut g = Graph::new();
    let q = g.constant(Array::row(query));
    let k = g.constant(Array::from_rows(keys)?);
    let v = g.constant(Array::from_rows(values)?);
    let out = attention(&mut g, q, k, v)?;
    Ok(g.value(out).data().to_vec())
}

/// Batched form of [`attention`]: query row `b` attends only to the key
/// rows `groups[b]..groups[b + 1]`. Other rows get a large negative score,
/// so their softmax weight is exactly zero.
pub fn masked_attention(g: &mut Graph, queries: Var, keys: Var, values: Var, groups: &[usize]) -> Result<Var> {
    let (b, _) = g.value(queries).dims2()?;
    let (rows, kd) = g.value(keys).dims2()?;
    if groups.len() != b + 1 || groups[b] != rows {
        return Err(Error::invalid(format!(
            "attention groups {groups:?} do not cover {rows} key rows for {b} queries"
        )));
    }
    if groups.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("attention over an empty key set"));
    }
    let mut mask = vec![-1e30; b * rows];
    for q in 0..b {
        mask[q * rows + groups[q]..q * rows + groups[q + 1]].fill(0.0);
    }
    let kt = g.transpose(keys)?;
    let scores = g.matmul(queries, kt)?;
    let scores = g.scale(scores, 1.0 / (kd as f64).sqrt())?;
    let mask = g.input(Array::new(&[b, rows], mask)?);
    let scores = g.add(scores, mask)?;
    let weights = g.softmax(scores)?;
    g.matmul(weights, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pair_returns_value() {
        let out = attend(&[0.3, -1.0], &[vec![2.0, 1.0]], &[vec![5.0, 6.0, 7.0]]).unwrap();
        assert_eq!(out, vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let k = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let v = vec![vec![1.0, 0.0], vec![3.0, 4.0]];
        let out = attend(&[0.5, 0.5], &k, &v).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-12 && (out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_gives_mean() {
        let k = vec![vec![0.0, 1.0], vec![0.0, -3.0], vec![0.0, 2.0]];
        let v = vec![vec![3.0], vec![6.0], vec![9.0]];
        let out = attend(&[1.0, 0.0], &k, &v).unwrap();
        assert!((out[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn masked_batch_matches_per_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand = |r: usize, c: usize| {
            Array::new(&[r, c], (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let (q, k, v) = (rand(3, 4), rand(6, 4), rand(6, 5));
        let groups = [0, 1, 4, 6];
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
        let out = masked_attention(&mut g, qv, kv, vv, &groups).unwrap();
        for b in 0..3 {
            let keys: Vec<Vec<f64>> = (groups[b]..groups[b + 1]).map(|r| k.row_slice(r).to_vec()).collect();
            let vals: Vec<Vec<f64>> = (groups[b]..groups[b + 1]).map(|r| v.row_slice(r).to_vec()).collect();
            let single = attend(q.row_slice(b), &keys, &vals).unwrap();
            for (x, y) in g.value(out).row_slice(b).iter().zip(&single) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(masked_attention(&mut g, qv, kv, vv, &[0, 1, 1, 6]).is_err());
    }

    #[test]
    fn empty_or_mismatched_inputs_fail() {
        assert!(attend(&[1.0], &[], &[]).is_err());
        assert!(attend(&[1.0], &[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
        assert!(attend(&[1.0, 2.0], &[vec![1.0]], &[vec![1.0]]).is_err());
    }
}
