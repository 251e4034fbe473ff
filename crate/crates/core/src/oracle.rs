//! Straight-line reference evaluations shared by unit tests.

use crate::numcore::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    let c = t.last_dim();
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

/// Rows of batch element `b` of a `[B, L, D]` tensor.
pub fn batch_rows(t: &Tensor<f64>, b: usize) -> Mat {
    let s = t.shape();
    let (l, d) = (s[1], s[2]);
    t.data()[b * l * d..(b + 1) * l * d].chunks(d).map(<[f64]>::to_vec).collect()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Multi-head attention for one batch element.
pub fn attention(q_in: &Mat, kv: &Mat, w: [&Mat; 4], heads: usize) -> Mat {
    let [wq, wk, wv, wo] = w;
    let (q, k, v) = (mm(q_in, wq), mm(kv, wk), mm(kv, wv));
    let dim = wq.len();
    let d = dim / heads;
    let mut concat = vec![vec![0.0; dim]; q.len()];
    for h in 0..heads {
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| (0..d).map(|c| qi[h * d + c] * kj[h * d + c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..d {
                concat[i][h * d + c] = e.iter().zip(&v).map(|(w, vj)| w / z * vj[h * d + c]).sum();
            }
        }
    }
    mm(&concat, wo)
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len());
    for (i, (a, b)) in actual.iter().zip(expected).enumerate() {
        assert!((a - b).abs() < tol, "index {i}: {a} vs {b}");
    }
}
