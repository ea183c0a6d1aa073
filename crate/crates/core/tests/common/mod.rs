//! Independent oracles shared by the integration tests. Nothing here calls
//! into the filter's arithmetic.

#![allow(dead_code)]

/// Lanczos approximation (g = 7, n = 9) of `ln Gamma(x)` for `x > 0`.
pub fn lanczos_ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lanczos_ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Poisson(x | theta) * Gamma(theta | alpha, beta) integrated over theta by
/// adaptive Gauss–Kronrod quadrature in `y = ln theta`.
pub fn predictive_by_quadrature(alpha: f64, beta: f64, x: u64) -> f64 {
    let xf = x as f64;
    let shape = alpha + xf;
    let norm = alpha * beta.ln() - lanczos_ln_gamma(alpha) - lanczos_ln_gamma(xf + 1.0);
    // theta^x e^-theta * theta^(alpha-1) e^(-beta theta) d theta, with d theta = theta dy.
    let f = |y: f64| (norm + shape * y - (beta + 1.0) * y.exp()).exp();
    let mode = (shape / (beta + 1.0)).ln();
    let lo = mode - 60.0 / shape - 2.0;
    let hi = mode + (1.0 + 80.0 / shape).ln() + 2.0;
    adaptive_gk(&f, lo, hi, 1e-12, 0)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_GAUSS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_KRONROD[7] * fc;
    let mut gauss = GK_GAUSS[3] * fc;
    for i in 0..7 {
        let s = f(c - h * GK_NODES[i]) + f(c + h * GK_NODES[i]);
        kronrod += GK_KRONROD[i] * s;
        if i % 2 == 1 {
            gauss += GK_GAUSS[i / 2] * s;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

pub fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth >= 40 {
        return value;
    }
    let m = 0.5 * (a + b);
    adaptive_gk(f, a, m, tol * 0.5, depth + 1) + adaptive_gk(f, m, b, tol * 0.5, depth + 1)
}

/// Negative-binomial pmf from the textbook formula with the Lanczos log-gamma.
pub fn nb_pmf(alpha: f64, beta: f64, x: u64) -> f64 {
    let xf = x as f64;
    (alpha * beta.ln() + lanczos_ln_gamma(alpha + xf)
        - (alpha + xf) * (beta + 1.0).ln()
        - lanczos_ln_gamma(alpha)
        - lanczos_ln_gamma(xf + 1.0))
    .exp()
}

/// Closed-form state after `counts`, recomputing every power of `k` from scratch.
pub fn closed_form_state(counts: &[u64], alpha1: f64, beta1: f64, k: f64) -> (f64, f64) {
    let t = counts.len() as i32;
    let mut alpha = k.powi(t) * alpha1;
    let mut beta = k.powi(t) * beta1;
    for (i, &x) in counts.iter().enumerate() {
        let i = i as i32 + 1;
        alpha += k.powi(t + 1 - i) * x as f64;
        beta += k.powi(i);
    }
    (alpha, beta)
}

/// Undiscounted Poisson–Gamma filter: shape adds counts, rate adds one.
pub struct StationaryFilter {
    pub alpha: f64,
    pub beta: f64,
}

impl StationaryFilter {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn forecast(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn observe(&mut self, x: u64) {
        self.alpha += x as f64;
        self.beta += 1.0;
    }

    pub fn log_likelihood(counts: &[u64], alpha: f64, beta: f64) -> f64 {
        let mut f = Self::new(alpha, beta);
        let mut total = 0.0;
        for &x in counts {
            total += nb_pmf(f.alpha, f.beta, x).ln();
            f.observe(x);
        }
        total
    }
}

/// Upper quantile by summing pmf values from zero.
pub fn cumulative_quantile(pmf: impl Fn(u64) -> f64, level: f64) -> u64 {
    let mut acc = 0.0;
    let mut x = 0;
    loop {
        acc += pmf(x);
        if acc >= level {
            return x;
        }
        x += 1;
    }
}

/// Deterministic uniform source for test inputs (xorshift64*).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }
}
