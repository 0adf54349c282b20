//! Finite structural causal models over `(Z, X2, X1, Y, Yhat)`, exact joint
//! enumeration, interventions on `Y`, and checks of the two identifiability
//! results.
//!
//! The conforming graph is `Z -> X2 -> X1 -> Y` with `{Y, X2, Z} -> Yhat`.
//! Three departures can be switched on for robustness checks: `Yhat` also
//! reading `X1`, `Y` also reading `Z`, and a latent `U` feeding both `X2` and
//! `X1` (with `X2 -> X1` dropped).
//!
//! CPT layouts are flat, row-major, child last:
//!
//! | table   | index                       |
//! |---------|-----------------------------|
//! | `p_u`   | `[u]`                       |
//! | `p_z`   | `[z]`                       |
//! | `p_x2`  | `[z][u][x2]`                |
//! | `p_x1`  | `[x2'][u][x1]`              |
//! | `p_y`   | `[x1][z'][y]`               |
//! | `p_yhat`| `[y][x2][z][x1'][yhat]`     |
//!
//! where primed parents have size 1 unless the corresponding edge is enabled.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest support allowed for any variable.
pub const MAX_SUPPORT: usize = 16;

/// Tolerance on conditional-row sums.
pub const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSizes {
    pub z: usize,
    pub x2: usize,
    pub x1: usize,
    pub y: usize,
    pub yhat: usize,
}

impl ScmSizes {
    pub fn uniform(n: usize) -> Self {
        ScmSizes {
            z: n,
            x2: n,
            x1: n,
            y: n,
            yhat: n,
        }
    }

    fn as_array(&self) -> [(&'static str, usize); 5] {
        [
            ("Z", self.z),
            ("X2", self.x2),
            ("X1", self.x1),
            ("Y", self.y),
            ("Yhat", self.yhat),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmStructure {
    #[serde(default)]
    pub yhat_depends_on_x1: bool,
    #[serde(default)]
    pub y_depends_on_z: bool,
    /// Support of a latent common cause of `X2` and `X1`; 0 means absent.
    #[serde(default)]
    pub latent_common_cause: usize,
}

impl ScmStructure {
    pub fn is_conforming(&self) -> bool {
        *self == ScmStructure::default()
    }

    fn u(&self) -> usize {
        self.latent_common_cause.max(1)
    }

    fn has_latent(&self) -> bool {
        self.latent_common_cause > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteScm {
    pub sizes: ScmSizes,
    #[serde(default)]
    pub structure: ScmStructure,
    #[serde(default = "one")]
    pub p_u: Vec<f64>,
    pub p_z: Vec<f64>,
    pub p_x2: Vec<f64>,
    pub p_x1: Vec<f64>,
    pub p_y: Vec<f64>,
    pub p_yhat: Vec<f64>,
}

fn one() -> Vec<f64> {
    vec![1.0]
}

impl DiscreteScm {
    fn x2_parent(&self) -> usize {
        if self.structure.has_latent() {
            1
        } else {
            self.sizes.x2
        }
    }

    fn z_for_y(&self) -> usize {
        if self.structure.y_depends_on_z {
            self.sizes.z
        } else {
            1
        }
    }

    fn x1_for_yhat(&self) -> usize {
        if self.structure.yhat_depends_on_x1 {
            self.sizes.x1
        } else {
            1
        }
    }

    /// `(name, number of rows, row length)` of every table.
    fn table_shapes(&self) -> [(&'static str, usize, usize); 6] {
        let s = self.sizes;
        let u = self.structure.u();
        [
            ("p_u", 1, u),
            ("p_z", 1, s.z),
            ("p_x2", s.z * u, s.x2),
            ("p_x1", self.x2_parent() * u, s.x1),
            ("p_y", s.x1 * self.z_for_y(), s.y),
            ("p_yhat", s.y * s.x2 * s.z * self.x1_for_yhat(), s.yhat),
        ]
    }

    fn tables(&self) -> [&[f64]; 6] {
        [&self.p_u, &self.p_z, &self.p_x2, &self.p_x1, &self.p_y, &self.p_yhat]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in self.sizes.as_array() {
            if !(1..=MAX_SUPPORT).contains(&n) {
                return Err(Error::invalid(format!(
                    "support of {name} is {n}, must be in [1, {MAX_SUPPORT}]"
                )));
            }
        }
        if self.structure.latent_common_cause > MAX_SUPPORT {
            return Err(Error::invalid("latent support too large"));
        }
        for ((name, rows, len), table) in self.table_shapes().into_iter().zip(self.tables()) {
            if table.len() != rows * len {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} with {rows} x {len} entries"),
                    actual: format!("{}", table.len()),
                });
            }
            for (r, row) in table.chunks(len).enumerate() {
                if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(Error::invalid(format!(
                        "{name} row {r} has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOL {
                    return Err(Error::RowSum {
                        table: name,
                        row: r,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn is_conforming(&self) -> bool {
        self.structure.is_conforming()
    }

    pub fn prob_z(&self, z: usize) -> f64 {
        self.p_z[z]
    }

    pub fn prob_x2(&self, x2: usize, z: usize, u: usize) -> f64 {
        self.p_x2[(z * self.structure.u() + u) * self.sizes.x2 + x2]
    }

    pub fn prob_x1(&self, x1: usize, x2: usize, u: usize) -> f64 {
        let x2 = if self.structure.has_latent() { 0 } else { x2 };
        self.p_x1[(x2 * self.structure.u() + u) * self.sizes.x1 + x1]
    }

    pub fn prob_y(&self, y: usize, x1: usize, z: usize) -> f64 {
        let z = if self.structure.y_depends_on_z { z } else { 0 };
        self.p_y[(x1 * self.z_for_y() + z) * self.sizes.y + y]
    }

    pub fn prob_yhat(&self, yhat: usize, y: usize, x2: usize, z: usize, x1: usize) -> f64 {
        let s = self.sizes;
        let x1 = if self.structure.yhat_depends_on_x1 { x1 } else { 0 };
        self.p_yhat[(((y * s.x2 + x2) * s.z + z) * self.x1_for_yhat() + x1) * s.yhat + yhat]
    }
}

/// Dense joint distribution over `(Z, X2, X1, Y, Yhat)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub sizes: ScmSizes,
    pub p: Vec<f64>,
}

impl JointTable {
    pub fn index(&self, z: usize, x2: usize, x1: usize, y: usize, yhat: usize) -> usize {
        let s = self.sizes;
        (((z * s.x2 + x2) * s.x1 + x1) * s.y + y) * s.yhat + yhat
    }

    pub fn get(&self, z: usize, x2: usize, x1: usize, y: usize, yhat: usize) -> f64 {
        self.p[self.index(z, x2, x1, y, yhat)]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Sum of the cells accepted by `keep(z, x2, x1, y, yhat)`.
    pub fn mass(&self, keep: impl Fn(usize, usize, usize, usize, usize) -> bool) -> f64 {
        let s = self.sizes;
        let mut total = 0.0;
        for z in 0..s.z {
            for x2 in 0..s.x2 {
                for x1 in 0..s.x1 {
                    for y in 0..s.y {
                        for yh in 0..s.yhat {
                            if keep(z, x2, x1, y, yh) {
                                total += self.get(z, x2, x1, y, yh);
                            }
                        }
                    }
                }
            }
        }
        total
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.sizes.y).map(|t| self.mass(|_, _, _, y, _| y == t)).collect()
    }
}

/// Exact product of the CPTs, with any latent summed out.
pub fn joint(scm: &DiscreteScm) -> Result<JointTable> {
    scm.validate()?;
    let s = scm.sizes;
    let mut table = JointTable {
        sizes: s,
        p: vec![0.0; s.z * s.x2 * s.x1 * s.y * s.yhat],
    };
    for u in 0..scm.structure.u() {
        let pu = scm.p_u[u];
        for z in 0..s.z {
            let pz = pu * scm.prob_z(z);
            for x2 in 0..s.x2 {
                let p2 = pz * scm.prob_x2(x2, z, u);
                for x1 in 0..s.x1 {
                    let p1 = p2 * scm.prob_x1(x1, x2, u);
                    for y in 0..s.y {
                        let py = p1 * scm.prob_y(y, x1, z);
                        for yh in 0..s.yhat {
                            let i = table.index(z, x2, x1, y, yh);
                            table.p[i] += py * scm.prob_yhat(yh, y, x2, z, x1);
                        }
                    }
                }
            }
        }
    }
    Ok(table)
}

/// The model with `Y`'s mechanism replaced by a point mass at `y`.
pub fn do_y(scm: &DiscreteScm, y: usize) -> Result<DiscreteScm> {
    if y >= scm.sizes.y {
        return Err(Error::ValueOutOfRange {
            variable: "Y",
            value: y,
            size: scm.sizes.y,
        });
    }
    let mut out = scm.clone();
    for row in out.p_y.chunks_mut(scm.sizes.y) {
        row.fill(0.0);
        row[y] = 1.0;
    }
    Ok(out)
}

fn check_value(variable: &'static str, value: usize, size: usize) -> Result<()> {
    if value >= size {
        return Err(Error::ValueOutOfRange { variable, value, size });
    }
    Ok(())
}

/// `T[y][yhat] = P(Yhat = yhat | do(Y = y), X1 = x1, X2 = x2)`.
pub fn causal_transition(scm: &DiscreteScm, x1: usize, x2: usize) -> Result<Vec<Vec<f64>>> {
    check_value("X1", x1, scm.sizes.x1)?;
    check_value("X2", x2, scm.sizes.x2)?;
    (0..scm.sizes.y)
        .map(|y| {
            let j = joint(&do_y(scm, y)?)?;
            let denom = j.mass(|_, a, b, _, _| a == x2 && b == x1);
            if denom <= 0.0 {
                return Err(Error::ZeroProbability(format!("X1 = {x1}, X2 = {x2}")));
            }
            Ok((0..scm.sizes.yhat)
                .map(|t| j.mass(|_, a, b, _, yh| a == x2 && b == x1 && yh == t) / denom)
                .collect())
        })
        .collect()
}

/// Observational `P(Yhat | Y = y, X2 = x2)`.
pub fn observational_noise_row(j: &JointTable, y: usize, x2: usize) -> Result<Vec<f64>> {
    let denom = j.mass(|_, a, _, b, _| a == x2 && b == y);
    if denom <= 0.0 {
        return Err(Error::ZeroProbability(format!("Y = {y}, X2 = {x2}")));
    }
    Ok((0..j.sizes.yhat)
        .map(|t| j.mass(|_, a, _, b, yh| a == x2 && b == y && yh == t) / denom)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    pub max_error: f64,
    /// Number of `(conditioning values)` combinations compared.
    pub checked: usize,
    /// Conditioning values skipped for having zero probability.
    pub skipped: Vec<(usize, usize)>,
}

/// Compares `P(Yhat | do(Y), X1, X2)` with `P(Yhat | Y, X2)` over every
/// `(y, x1, x2)` where both are defined.
pub fn verify_theorem1(scm: &DiscreteScm, tol: f64) -> Result<Verdict> {
    let j = joint(scm)?;
    let s = scm.sizes;
    let mut max_error: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = Vec::new();
    for x1 in 0..s.x1 {
        for x2 in 0..s.x2 {
            let t = match causal_transition(scm, x1, x2) {
                Ok(t) => t,
                Err(Error::ZeroProbability(_)) => {
                    skipped.push((x1, x2));
                    continue;
                }
                Err(e) => return Err(e),
            };
            for (y, row) in t.iter().enumerate() {
                let Ok(obs) = observational_noise_row(&j, y, x2) else {
                    continue;
                };
                checked += 1;
                for (a, b) in row.iter().zip(&obs) {
                    max_error = max_error.max((a - b).abs());
                }
            }
        }
    }
    Ok(Verdict {
        holds: max_error <= tol,
        max_error,
        checked,
        skipped,
    })
}

/// The three routes to the effect of `X1` on `Y`, per `x1` value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Routes {
    pub x1: usize,
    /// `Σ_{x2} P(Y | x1, x2) P(x2)`.
    pub backdoor: Vec<f64>,
    /// `P(Y | X1 = x1)`.
    pub conditional: Vec<f64>,
    /// `P(Y)` in the model with `X1`'s mechanism replaced by a point mass.
    pub truncated: Vec<f64>,
}

/// `P(Y)` after `do(X1 = x1)`, by truncated factorization.
pub fn interventional_y_given_do_x1(scm: &DiscreteScm, x1: usize) -> Result<Vec<f64>> {
    check_value("X1", x1, scm.sizes.x1)?;
    let mut m = scm.clone();
    for row in m.p_x1.chunks_mut(scm.sizes.x1) {
        row.fill(0.0);
        row[x1] = 1.0;
    }
    Ok(joint(&m)?.marginal_y())
}

pub fn theorem2_routes(scm: &DiscreteScm, x1: usize) -> Result<Theorem2Routes> {
    let j = joint(scm)?;
    let s = scm.sizes;
    let px1 = j.mass(|_, _, a, _, _| a == x1);
    if px1 <= 0.0 {
        return Err(Error::ZeroProbability(format!("X1 = {x1}")));
    }
    let conditional = (0..s.y)
        .map(|t| j.mass(|_, _, a, y, _| a == x1 && y == t) / px1)
        .collect();
    let mut backdoor = vec![0.0; s.y];
    for x2 in 0..s.x2 {
        let px2 = j.mass(|_, b, _, _, _| b == x2);
        let p12 = j.mass(|_, b, a, _, _| b == x2 && a == x1);
        if px2 <= 0.0 {
            continue;
        }
        if p12 <= 0.0 {
            // P(Y | x1, x2) undefined on a positive-mass x2: adjustment not identified
            return Err(Error::ZeroProbability(format!("X1 = {x1}, X2 = {x2}")));
        }
        for (t, b) in backdoor.iter_mut().enumerate() {
            *b += px2 * j.mass(|_, c, a, y, _| c == x2 && a == x1 && y == t) / p12;
        }
    }
    Ok(Theorem2Routes {
        x1,
        backdoor,
        conditional,
        truncated: interventional_y_given_do_x1(scm, x1)?,
    })
}

/// Checks `P(Y | do(X1)) = P(Y | X1)`: the backdoor-adjusted and the
/// truncated-factorization interventional distributions are each compared
/// with the plain conditional. Zero-support `x1` values are skipped and listed.
pub fn verify_theorem2(scm: &DiscreteScm, tol: f64) -> Result<Verdict> {
    let mut max_error: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = Vec::new();
    for x1 in 0..scm.sizes.x1 {
        let r = match theorem2_routes(scm, x1) {
            Ok(r) => r,
            Err(Error::ZeroProbability(_)) => {
                skipped.push((x1, 0));
                continue;
            }
            Err(e) => return Err(e),
        };
        checked += 1;
        for ((b, c), t) in r.backdoor.iter().zip(&r.conditional).zip(&r.truncated) {
            max_error = max_error.max((b - c).abs()).max((t - c).abs());
        }
    }
    Ok(Verdict {
        holds: max_error <= tol,
        max_error,
        checked,
        skipped,
    })
}

fn dirichlet_rows(rows: usize, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * len);
    for _ in 0..rows {
        let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = draws.iter().sum();
        out.extend(draws.iter().map(|d| d / s));
    }
    out
}

/// Every CPT row drawn from a flat Dirichlet.
pub fn random_scm(sizes: ScmSizes, seed: u64) -> Result<DiscreteScm> {
    random_scm_with(sizes, ScmStructure::default(), seed)
}

pub fn random_scm_with(sizes: ScmSizes, structure: ScmStructure, seed: u64) -> Result<DiscreteScm> {
    for (name, n) in sizes.as_array() {
        if !(2..=MAX_SUPPORT).contains(&n) {
            return Err(Error::invalid(format!(
                "support of {name} is {n}, must be in [2, {MAX_SUPPORT}]"
            )));
        }
    }
    let mut scm = DiscreteScm {
        sizes,
        structure,
        p_u: Vec::new(),
        p_z: Vec::new(),
        p_x2: Vec::new(),
        p_x1: Vec::new(),
        p_y: Vec::new(),
        p_yhat: Vec::new(),
    };
    let mut r = rng::seeded(seed);
    let shapes = scm.table_shapes();
    let mut tables: Vec<Vec<f64>> = shapes
        .iter()
        .map(|(_, rows, len)| dirichlet_rows(*rows, *len, &mut r))
        .collect();
    scm.p_yhat = tables.pop().unwrap();
    scm.p_y = tables.pop().unwrap();
    scm.p_x1 = tables.pop().unwrap();
    scm.p_x2 = tables.pop().unwrap();
    scm.p_z = tables.pop().unwrap();
    scm.p_u = tables.pop().unwrap();
    scm.validate()?;
    Ok(scm)
}

/// `Yhat` additionally reads `X1`.
pub fn adversarial_theorem1(sizes: ScmSizes, seed: u64) -> Result<DiscreteScm> {
    random_scm_with(
        sizes,
        ScmStructure {
            yhat_depends_on_x1: true,
            ..ScmStructure::default()
        },
        seed,
    )
}

/// `Y` additionally reads `Z`.
pub fn adversarial_theorem2(sizes: ScmSizes, seed: u64) -> Result<DiscreteScm> {
    random_scm_with(
        sizes,
        ScmStructure {
            y_depends_on_z: true,
            ..ScmStructure::default()
        },
        seed,
    )
}

/// `X2` and `X1` share a latent parent `U` instead of `X2 -> X1`.
pub fn common_cause_scm(sizes: ScmSizes, latent: usize, seed: u64) -> Result<DiscreteScm> {
    if latent < 2 {
        return Err(Error::invalid("latent support must be at least 2"));
    }
    random_scm_with(
        sizes,
        ScmStructure {
            latent_common_cause: latent,
            ..ScmStructure::default()
        },
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic(n: usize) -> DiscreteScm {
        let point = |rows: usize, at: usize| {
            let mut v = vec![0.0; rows * n];
            for r in 0..rows {
                v[r * n + at] = 1.0;
            }
            v
        };
        DiscreteScm {
            sizes: ScmSizes::uniform(n),
            structure: ScmStructure::default(),
            p_u: vec![1.0],
            p_z: point(1, 1),
            p_x2: point(n, 0),
            p_x1: point(n, 1),
            p_y: point(n, 0),
            p_yhat: point(n * n * n, 1),
        }
    }

    #[test]
    fn deterministic_joint_has_one_cell() {
        let j = joint(&deterministic(2)).unwrap();
        assert_eq!(j.p.iter().filter(|p| **p > 0.0).count(), 1);
        assert_eq!(j.get(1, 0, 1, 0, 1), 1.0);
        let v = verify_theorem1(&deterministic(2), 0.0).unwrap();
        assert_eq!(v.max_error, 0.0);
    }

    #[test]
    fn uniform_joint() {
        let mut scm = random_scm(ScmSizes::uniform(2), 0).unwrap();
        for t in [
            &mut scm.p_z,
            &mut scm.p_x2,
            &mut scm.p_x1,
            &mut scm.p_y,
            &mut scm.p_yhat,
        ] {
            t.fill(0.5);
        }
        let j = joint(&scm).unwrap();
        assert!(j.p.iter().all(|p| (*p - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn do_y_is_point_mass_and_idempotent() {
        let scm = random_scm(ScmSizes::uniform(3), 4).unwrap();
        let d = do_y(&scm, 2).unwrap();
        let my = joint(&d).unwrap().marginal_y();
        assert!((my[2] - 1.0).abs() < 1e-14);
        assert_eq!(do_y(&d, 2).unwrap(), d);
        assert!(do_y(&scm, 3).is_err());
        // upstream marginal untouched
        let (a, b) = (joint(&scm).unwrap(), joint(&d).unwrap());
        for z in 0..3 {
            for x2 in 0..3 {
                for x1 in 0..3 {
                    let pa = a.mass(|zz, aa, bb, _, _| zz == z && aa == x2 && bb == x1);
                    let pb = b.mass(|zz, aa, bb, _, _| zz == z && aa == x2 && bb == x1);
                    assert!((pa - pb).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn identity_noise_mechanism_gives_identity_transition() {
        let mut scm = random_scm(ScmSizes::uniform(3), 1).unwrap();
        for (r, row) in scm.p_yhat.chunks_mut(3).enumerate() {
            let y = r / 9;
            row.fill(0.0);
            row[y] = 1.0;
        }
        let t = causal_transition(&scm, 1, 2).unwrap();
        for (i, row) in t.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conforming_models_satisfy_both_checks() {
        for seed in 0..20 {
            let scm = random_scm(ScmSizes::uniform(3), seed).unwrap();
            assert!(verify_theorem1(&scm, 1e-10).unwrap().holds);
            assert!(verify_theorem2(&scm, 1e-10).unwrap().holds);
        }
    }

    #[test]
    fn adversarial_models_are_rejected() {
        let s = ScmSizes::uniform(3);
        assert!(
            verify_theorem1(&adversarial_theorem1(s, 0).unwrap(), 1e-10)
                .unwrap()
                .max_error
                > 0.01
        );
        assert!(
            verify_theorem2(&adversarial_theorem2(s, 0).unwrap(), 1e-10)
                .unwrap()
                .max_error
                > 0.01
        );
    }

    #[test]
    fn y_ignoring_x1_gives_marginal() {
        let mut scm = random_scm(ScmSizes::uniform(3), 2).unwrap();
        let row = scm.p_y[..3].to_vec();
        for r in scm.p_y.chunks_mut(3) {
            r.copy_from_slice(&row);
        }
        let v = verify_theorem2(&scm, 0.0);
        let r = theorem2_routes(&scm, 0).unwrap();
        for (a, b) in r.backdoor.iter().zip(&row) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(v.unwrap().max_error < 1e-15);
    }

    #[test]
    fn zero_support_is_reported() {
        let mut scm = random_scm(ScmSizes::uniform(2), 3).unwrap();
        for r in scm.p_x1.chunks_mut(2) {
            r.copy_from_slice(&[1.0, 0.0]);
        }
        let v = verify_theorem2(&scm, 1e-10).unwrap();
        assert_eq!(v.skipped, vec![(1, 0)]);
        assert!(matches!(causal_transition(&scm, 1, 0), Err(Error::ZeroProbability(_))));
    }

    #[test]
    fn bad_rows_rejected() {
        let mut scm = random_scm(ScmSizes::uniform(2), 0).unwrap();
        scm.p_z = vec![0.5, 0.6];
        assert!(matches!(scm.validate(), Err(Error::RowSum { table: "p_z", .. })));
        assert!(random_scm(ScmSizes::uniform(1), 0).is_err());
    }
}
