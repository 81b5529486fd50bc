use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix};

use super::{Branch, Bus, NetworkError};

/// Assembles the bus admittance matrix `G + jB` with rows and columns in the
/// order of `buses`.
///
/// Each branch is the usual pi-model with an ideal phase-shifting
/// transformer on the from side: series admittance `1/(r + jx)`, half the
/// charging susceptance at each end, and a complex ratio `tap * e^{j shift}`.
/// Bus shunts are added to the diagonal.
pub fn build_admittance(buses: &[Bus], branches: &[Branch]) -> Result<(DMatrix<f64>, DMatrix<f64>), NetworkError> {
    let n = buses.len();
    let index: BTreeMap<u32, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);

    for br in branches {
        let z = Complex::new(br.r, br.x);
        if z.norm_sqr() == 0.0 {
            return Err(NetworkError::ZeroImpedance {
                from: br.from,
                to: br.to,
            });
        }
        let f = *index.get(&br.from).ok_or(NetworkError::UnknownBus(br.from))?;
        let t = *index.get(&br.to).ok_or(NetworkError::UnknownBus(br.to))?;
        let ys = z.inv();
        let charging = Complex::new(0.0, br.b / 2.0);
        let ratio = Complex::from_polar(br.tap, br.shift);

        let ytt = ys + charging;
        let yff = ytt / (br.tap * br.tap);
        let yft = -ys / ratio.conj();
        let ytf = -ys / ratio;

        y[(f, f)] += yff;
        y[(t, t)] += ytt;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
    }
    for (i, bus) in buses.iter().enumerate() {
        y[(i, i)] += Complex::new(bus.gs, bus.bs);
    }

    Ok((y.map(|c| c.re), y.map(|c| c.im)))
}
