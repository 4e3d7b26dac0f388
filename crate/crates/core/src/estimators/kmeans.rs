use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::scalar::Scalar;

const MAX_LLOYD_ITERATIONS: usize = 300;

/// Lloyd's k-means with k-means++ seeding. Returns the `m x h` centers.
///
/// A cluster that loses all its points is re-seeded with the point lying
/// farthest from its current center.
pub fn kmeans_cluster<T: Scalar>(x: &Matrix<T>, m: usize, seed: u64) -> Result<Matrix<T>> {
    kmeans_with_assignments(x, m, seed).map(|(c, _)| c)
}

pub(crate) fn kmeans_with_assignments<T: Scalar>(x: &Matrix<T>, m: usize, seed: u64) -> Result<(Matrix<T>, Vec<usize>)> {
    let n = x.nrows();
    if m < 1 || n < m {
        return Err(Error::TooFewPoints { needed: m.max(1), got: n });
    }
    let h = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(x, m, &mut rng);
    let mut assign = vec![usize::MAX; n];

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (i, row) in x.rows_iter().enumerate() {
            let c = nearest(&centers, row).0;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        reseed_empty(x, &mut centers, &mut assign);

        let mut sums: Matrix<T> = Matrix::zeros(m, h);
        let mut counts = vec![0usize; m];
        for (row, &a) in x.rows_iter().zip(&assign) {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..m {
            if counts[c] == 0 {
                continue;
            }
            let cnt = T::of_usize(counts[c]);
            for (dst, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / cnt;
            }
        }
    }
    Ok((centers, assign))
}

pub(crate) fn nearest<T: Scalar>(centers: &Matrix<T>, row: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, center) in centers.rows_iter().enumerate() {
        let d = squared_distance(center, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar>(x: &Matrix<T>, m: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(m);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = x.rows_iter().map(|r| squared_distance(r, x.row(chosen[0])).as_f64()).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("total > 0 implies a positive weight")
        } else {
            // every point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, r) in x.rows_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, x.row(next)).as_f64());
        }
    }
    x.select_rows(&chosen)
}

fn reseed_empty<T: Scalar>(x: &Matrix<T>, centers: &mut Matrix<T>, assign: &mut [usize]) {
    let m = centers.nrows();
    loop {
        let mut counts = vec![0usize; m];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = (usize::MAX, T::neg_infinity());
        for (i, row) in x.rows_iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = squared_distance(centers.row(assign[i]), row);
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.0 == usize::MAX {
            return;
        }
        centers.row_mut(empty).copy_from_slice(x.row(far.0));
        assign[far.0] = empty;
    }
}
