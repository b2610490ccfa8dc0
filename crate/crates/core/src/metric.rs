use ndarray::{Array2, ArrayView1, ArrayView2};

pub(crate) fn sq_euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_euclidean(a, b).sqrt()
}

/// Full N×N Euclidean distance matrix.
pub(crate) fn pairwise(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(points.row(i), points.row(j));
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<'a>(values: impl IntoIterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}
