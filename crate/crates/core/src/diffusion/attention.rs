//! Rotary position embedding and scaled dot-product attention with an
//! additive bias.

use super::tensor::Mat;
use super::DiffusionError;

pub const ROPE_BASE: f64 = 10_000.0;

fn rotate(m: &Mat, positions: &[f64]) -> Mat {
    let half = m.cols / 2;
    let mut out = m.clone();
    for (r, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(r);
        for i in 0..half {
            let theta = pos * ROPE_BASE.powf(-2.0 * i as f64 / m.cols as f64);
            let (s, c) = theta.sin_cos();
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = a * c - b * s;
            row[2 * i + 1] = a * s + b * c;
        }
    }
    out
}

/// Rotates channel pairs `(2i, 2i+1)` of each row by `pos·base^(−2i/d)`.
pub fn rope_apply(q: &Mat, k: &Mat, positions: &[f64]) -> Result<(Mat, Mat), DiffusionError> {
    for m in [q, k] {
        if m.cols % 2 != 0 {
            return Err(DiffusionError::OddChannels(m.cols));
        }
        if m.rows != positions.len() {
            return Err(DiffusionError::Shape(format!(
                "{} rows vs {} positions",
                m.rows,
                positions.len()
            )));
        }
    }
    Ok((rotate(q, positions), rotate(k, positions)))
}

/// Row-stochastic softmax((Q̂K̂ᵀ)/√d + B).
pub fn attention_probs(q: &Mat, k: &Mat, bias: Option<&Mat>) -> Result<Mat, DiffusionError> {
    if q.cols != k.cols {
        return Err(DiffusionError::Shape(format!("query width {} vs key width {}", q.cols, k.cols)));
    }
    if !q.is_finite() {
        return Err(DiffusionError::NonFinite("queries"));
    }
    if !k.is_finite() {
        return Err(DiffusionError::NonFinite("keys"));
    }
    if let Some(b) = bias {
        if (b.rows, b.cols) != (q.rows, k.rows) {
            return Err(DiffusionError::Shape(format!(
                "bias {}x{} vs attention {}x{}",
                b.rows, b.cols, q.rows, k.rows
            )));
        }
        if !b.is_finite() {
            return Err(DiffusionError::NonFinite("bias"));
        }
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut logits = q.matmul(&k.transpose());
    for r in 0..logits.rows {
        let brow = bias.map(|b| b.row(r));
        let row = logits.row_mut(r);
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * scale + brow.map_or(0.0, |b| b[j]);
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(logits)
}

/// softmax((Q̂K̂ᵀ)/√d + B)·V
pub fn attention_with_bias(q: &Mat, k: &Mat, v: &Mat, bias: Option<&Mat>) -> Result<Mat, DiffusionError> {
    if v.rows != k.rows {
        return Err(DiffusionError::Shape(format!("{} values vs {} keys", v.rows, k.rows)));
    }
    if !v.is_finite() {
        return Err(DiffusionError::NonFinite("values"));
    }
    Ok(attention_probs(q, k, bias)?.matmul(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand(rows: usize, cols: usize, seed: u64) -> Mat {
        Mat::random(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_bias_is_plain_sdpa() {
        let (q, k, v) = (rand(5, 4, 1), rand(5, 4, 2), rand(5, 3, 3));
        let a = attention_with_bias(&q, &k, &v, None).unwrap();
        let b = attention_with_bias(&q, &k, &v, Some(&Mat::zeros(5, 5))).unwrap();
        assert_eq!(a, b);
        let p = attention_probs(&q, &k, None).unwrap();
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saturating_bias_selects_entry() {
        let (q, k) = (rand(4, 4, 4), rand(4, 4, 5));
        let mut b = Mat::zeros(4, 4);
        b.set(1, 2, 1e4);
        let p = attention_probs(&q, &k, Some(&b)).unwrap();
        assert!(p.get(1, 2) > 1.0 - 1e-9);
    }

    #[test]
    fn row_shift_invariance() {
        let (q, k, v) = (rand(4, 4, 6), rand(4, 4, 7), rand(4, 2, 8));
        let b0 = rand(4, 4, 9);
        let mut b1 = b0.clone();
        b1.row_mut(2).iter_mut().for_each(|x| *x += 3.7);
        let a = attention_with_bias(&q, &k, &v, Some(&b0)).unwrap();
        let c = attention_with_bias(&q, &k, &v, Some(&b1)).unwrap();
        for j in 0..2 {
            assert!((a.get(2, j) - c.get(2, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let (q, k, v) = (rand(2, 2, 1), rand(2, 2, 2), rand(2, 2, 3));
        let mut b = Mat::zeros(2, 2);
        b.set(0, 0, f64::NAN);
        assert!(attention_with_bias(&q, &k, &v, Some(&b)).is_err());
        let mut bad = q.clone();
        bad.set(0, 0, f64::INFINITY);
        assert!(attention_with_bias(&bad, &k, &v, None).is_err());
    }

    #[test]
    fn rope_properties() {
        let q = rand(6, 8, 10);
        let pos: Vec<f64> = (0..6).map(f64::from).collect();
        let (rq, _) = rope_apply(&q, &q, &pos).unwrap();
        assert_eq!(rq.row(0), q.row(0));
        for r in 0..6 {
            let n0: f64 = q.row(r).iter().map(|x| x * x).sum();
            let n1: f64 = rq.row(r).iter().map(|x| x * x).sum();
            assert!((n0 - n1).abs() < 1e-6);
        }
        // relative: equal raw rows, inner product depends only on i − j
        let one = rand(1, 8, 11);
        let same = Mat::from_vec(6, 8, one.data.repeat(6));
        let (a, b) = rope_apply(&same, &same, &pos).unwrap();
        let dot = |i: usize, j: usize| a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(3, 1) - dot(4, 2)).abs() < 1e-9);
        assert!((dot(0, 2) - dot(3, 5)).abs() < 1e-9);
        assert!(rope_apply(&rand(2, 3, 1), &rand(2, 3, 1), &[0.0, 1.0]).is_err());
    }
}
