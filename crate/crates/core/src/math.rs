//! Scalar numerical kernels: normal distribution functions, polynomial
//! evaluation and least-squares fitting, and adaptive Gauss-Legendre
//! quadrature.

/// Standard normal quantile function (inverse CDF).
///
/// Rational approximation with one central and two tail branches; relative
/// error stays below 1.5e-9 over the open unit interval, verified against a
/// bisection oracle in the tests. Returns +-infinity at p = 0 or 1; callers
/// that sample pass variates from the open interval only.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |p: f64| -> f64 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Horner evaluation of a polynomial with ascending coefficients:
/// `coeffs[0] + coeffs[1] x + coeffs[2] x^2 + ...`.
pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Least-squares polynomial fit of the given degree, ascending coefficients.
///
/// Solves the normal equations with partially pivoted Gaussian elimination.
/// Intended for the low degrees used by profile modeling; panics if the
/// system is numerically singular (fewer distinct xs than coefficients).
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Vec<f64> {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() > degree, "need at least degree+1 points");
    let n = degree + 1;
    // Accumulate moments sum(x^k) for k in 0..2n and sum(y x^k) for k in 0..n.
    let mut moments = vec![0.0; 2 * n - 1];
    let mut rhs = vec![0.0; n];
    for (&x, &y) in xs.iter().zip(ys) {
        let mut p = 1.0;
        for k in 0..2 * n - 1 {
            moments[k] += p;
            if k < n {
                rhs[k] += y * p;
            }
            p *= x;
        }
    }
    let mut m = vec![vec![0.0; n + 1]; n];
    for r in 0..n {
        for c in 0..n {
            m[r][c] = moments[r + c];
        }
        m[r][n] = rhs[r];
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        assert!(m[col][col] != 0.0, "singular least-squares system");
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut out = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = m[r][n];
        for c in r + 1..n {
            acc -= m[r][c] * out[c];
        }
        out[r] = acc / m[r][r];
    }
    out
}

/// Sample mean and population standard deviation (divisor n).
pub fn mean_population_std(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty());
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// 10-point Gauss-Legendre nodes/weights on [-1, 1] (symmetric half stored).
const GL_NODES: [f64; 5] = [
    0.148874338981631211,
    0.433395394129247191,
    0.679409568299024406,
    0.865063366688984511,
    0.973906528517171720,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295524224714752870,
    0.269266719309996355,
    0.219086362515982044,
    0.149451349150580593,
    0.066671344308688138,
];

fn gl10(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..5 {
        acc += GL_WEIGHTS[i] * (f(mid - half * GL_NODES[i]) + f(mid + half * GL_NODES[i]));
    }
    acc * half
}

/// Adaptive Gauss-Legendre integration of `f` over `[a, b]` to the given
/// absolute tolerance. Panels are bisected until the 10-point estimate
/// agrees with the sum of its halves.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let mid = 0.5 * (a + b);
        let left = gl10(f, a, mid);
        let right = gl10(f, mid, b);
        if depth >= 50 || (left + right - whole).abs() <= tol {
            left + right
        } else {
            recurse(f, a, mid, left, 0.5 * tol, depth + 1)
                + recurse(f, mid, b, right, 0.5 * tol, depth + 1)
        }
    }
    recurse(f, a, b, gl10(f, a, b), tol, 0)
}
