//! Adaptive Gauss–Legendre quadrature (5-point rule checked against 10-point).

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

const GL10: [(f64, f64); 10] = [
    (-0.148_874_338_981_631_22, 0.295_524_224_714_752_87),
    (0.148_874_338_981_631_22, 0.295_524_224_714_752_87),
    (-0.433_395_394_129_247_2, 0.269_266_719_309_996_35),
    (0.433_395_394_129_247_2, 0.269_266_719_309_996_35),
    (-0.679_409_568_299_024_4, 0.219_086_362_515_982_04),
    (0.679_409_568_299_024_4, 0.219_086_362_515_982_04),
    (-0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (-0.973_906_528_517_171_7, 0.066_671_344_308_688_14),
    (0.973_906_528_517_171_7, 0.066_671_344_308_688_14),
];

fn rule(f: &impl Fn(f64) -> f64, a: f64, b: f64, nodes: &[(f64, f64)]) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    h * nodes.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>()
}

/// `\int_a^b f` with per-interval absolute tolerance `tol`.
pub fn adaptive_gauss(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let coarse = rule(f, a, b, &GL5);
        let fine = rule(f, a, b, &GL10);
        if (fine - coarse).abs() <= tol || depth >= 40 {
            return fine;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(f, a, b, tol, 0)
}
