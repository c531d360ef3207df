use nalgebra::{DMatrix, DVector};

use super::{Polytope, SmpcError};

fn poly(coeffs: &[f64], r: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c)
}

/// Inverse standard normal CDF (Wichura's AS241, double-precision variant).
pub fn normal_quantile(p: f64) -> Result<f64, SmpcError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SmpcError::Probability(p));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let v = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -v } else { v })
}

/// Per-constraint probability `p̄ = 1 − (1/n − (p + 1)/(2n))`.
pub fn probability_level(p: f64, n_dims: usize) -> Result<f64, SmpcError> {
    if !(0.0..1.0).contains(&p) || n_dims == 0 {
        return Err(SmpcError::Probability(p));
    }
    let n = n_dims as f64;
    Ok(1.0 - (1.0 / n - (p + 1.0) / (2.0 * n)))
}

/// `h' = h − |H|·Φ⁻¹(p̄)·sqrt(diag Σ)` rowwise.
pub fn tighten(
    set: &Polytope,
    sigma: &DMatrix<f64>,
    p_level: f64,
    n_dims: usize,
) -> Result<Polytope, SmpcError> {
    if sigma.shape() != (set.dim(), set.dim()) {
        return Err(SmpcError::Dimension(format!(
            "covariance {:?} for a set in R^{}",
            sigma.shape(),
            set.dim()
        )));
    }
    let z = normal_quantile(probability_level(p_level, n_dims)?)?;
    let std = DVector::from_fn(set.dim(), |i, _| sigma[(i, i)].max(0.0).sqrt());
    let margin = set.h_mat.abs() * std * z;
    Ok(Polytope {
        h_mat: set.h_mat.clone(),
        h: &set.h - margin,
        labels: set.labels.clone(),
    })
}

/// Tightens a box `lo ≤ u ≤ hi` by `z·σ_i` on each side. If a box would
/// invert, it collapses to its midpoint.
pub fn tighten_box(
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    sigma: &DMatrix<f64>,
    z: f64,
) -> (DVector<f64>, DVector<f64>) {
    let mut l = lo.clone();
    let mut u = hi.clone();
    for i in 0..lo.len() {
        let m = z * sigma[(i, i)].max(0.0).sqrt();
        l[i] += m;
        u[i] -= m;
        if l[i] > u[i] {
            let mid = 0.5 * (lo[i] + hi[i]);
            l[i] = mid;
            u[i] = mid;
        }
    }
    (l, u)
}
