use labelnoise_core::causal::{
    adversarial_theorem1, adversarial_theorem2, causal_transition, common_cause_scm, random_scm, random_scm_with,
    verify_theorem1, verify_theorem2, DiscreteScm, ScmSizes, ScmStructure,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct summation over the raw CPT arrays in the model where `Y` is set to
/// `y`: the mechanism of `Y` drops out, so
/// `P(yhat, x1, x2) = Σ_{u,z} p(u) p(z) p(x2|z,u) p(x1|x2,u) p(yhat|y,x2,z,x1)`.
fn enumerated_transition(scm: &DiscreteScm, x1: usize, x2: usize) -> Vec<Vec<f64>> {
    let s = scm.sizes;
    let nu = scm.p_u.len();
    let latent = scm.structure.latent_common_cause > 0;
    let x1_in_yhat = scm.structure.yhat_depends_on_x1;
    let px2 = |x2: usize, z: usize, u: usize| scm.p_x2[z * nu * s.x2 + u * s.x2 + x2];
    let px1 = |x1: usize, x2: usize, u: usize| {
        let parent = if latent { 0 } else { x2 };
        scm.p_x1[parent * nu * s.x1 + u * s.x1 + x1]
    };
    let pyhat = |t: usize, y: usize, x2: usize, z: usize, x1: usize| {
        let (w, a) = if x1_in_yhat { (s.x1, x1) } else { (1, 0) };
        scm.p_yhat[y * s.x2 * s.z * w * s.yhat + x2 * s.z * w * s.yhat + z * w * s.yhat + a * s.yhat + t]
    };
    let mut out = vec![vec![0.0; s.yhat]; s.y];
    for (y, row) in out.iter_mut().enumerate() {
        let mut denom = 0.0;
        for u in 0..nu {
            for z in 0..s.z {
                let w = scm.p_u[u] * scm.p_z[z] * px2(x2, z, u) * px1(x1, x2, u);
                denom += w;
                for (t, r) in row.iter_mut().enumerate() {
                    *r += w * pyhat(t, y, x2, z, x1);
                }
            }
        }
        for r in row.iter_mut() {
            *r /= denom;
        }
    }
    out
}

fn random_sizes(rng: &mut ChaCha8Rng) -> ScmSizes {
    let mut d = || rng.random_range(2..=4);
    ScmSizes {
        z: d(),
        x2: d(),
        x1: d(),
        y: d(),
        yhat: d(),
    }
}

/// Largest entry-wise gap between `causal_transition` and the enumeration
/// over `num_scms` seeded models of mixed structure.
pub fn max_transition_deviation(num_scms: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for i in 0..num_scms {
        let sizes = random_sizes(&mut rng);
        let structure = match i % 4 {
            0 | 1 => ScmStructure::default(),
            2 => ScmStructure {
                yhat_depends_on_x1: true,
                ..Default::default()
            },
            _ => ScmStructure {
                latent_common_cause: 3,
                y_depends_on_z: true,
                ..Default::default()
            },
        };
        let scm = random_scm_with(sizes, structure, 1000 + i).unwrap();
        for x1 in 0..sizes.x1 {
            for x2 in 0..sizes.x2 {
                let got = causal_transition(&scm, x1, x2).unwrap();
                let want = enumerated_transition(&scm, x1, x2);
                for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
                    worst = worst.max((g - w).abs());
                }
            }
        }
    }
    worst
}

#[test]
fn causal_transition_matches_enumeration() {
    let worst = max_transition_deviation(50);
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn transition_rows_are_distributions() {
    let scm = random_scm(ScmSizes::uniform(4), 3).unwrap();
    let t = causal_transition(&scm, 2, 1).unwrap();
    for row in &t {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn conforming_models_satisfy_both_identities() {
    for seed in 0..30 {
        let scm = random_scm(ScmSizes::uniform(3), seed).unwrap();
        assert!(verify_theorem1(&scm, 1e-10).unwrap().holds);
        assert!(verify_theorem2(&scm, 1e-10).unwrap().holds);
    }
}

#[test]
fn adversarial_models_break_their_identity() {
    let sizes = ScmSizes::uniform(3);
    let v1 = verify_theorem1(&adversarial_theorem1(sizes, 5).unwrap(), 1e-10).unwrap();
    let v2 = verify_theorem2(&adversarial_theorem2(sizes, 5).unwrap(), 1e-10).unwrap();
    assert!(v1.max_error > 0.01, "{}", v1.max_error);
    assert!(v2.max_error > 0.01, "{}", v2.max_error);
}

// X2 <- U -> X1: Y is still reached only through X1, so the second identity
// survives. X2 becomes a collider of Z and U, so X1 says something about Z
// beyond X2 and the first identity fails.
#[test]
fn common_cause_keeps_second_identity_only() {
    let mut broken = 0;
    for seed in 0..20 {
        let scm = common_cause_scm(ScmSizes::uniform(3), 3, seed).unwrap();
        assert!(verify_theorem2(&scm, 1e-10).unwrap().holds, "seed {seed}");
        if !verify_theorem1(&scm, 1e-10).unwrap().holds {
            broken += 1;
        }
    }
    assert!(
        broken >= 15,
        "first identity fails on only {broken} of 20 common-cause models"
    );
}
