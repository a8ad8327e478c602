use dcmatch::dcorr::{alpha_d_matrix, AlphaParam, ObservationMatrix};
use dcmatch::framemetric::VideoAlphaDRepresentation;
use dcmatch::glac::{
    fit_bank_to_teacher, glac_ce_loss, glac_student, kl_guidance_loss, kl_logit_grad, ClassPrototypeBank,
    StudentDistribution, TeacherDistribution,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const CLASSES: usize = 10;
const DIM: usize = 16;

#[test]
fn kl_and_ce_spot_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let raw: Vec<f64> = (0..CLASSES).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let kl = kl_guidance_loss(&StudentDistribution::new(p.clone()).unwrap(), &TeacherDistribution::new(p).unwrap()).unwrap();
        assert!(kl.abs() < 1e-12, "{kl}");
    }
    let kl = kl_guidance_loss(
        &StudentDistribution::new(vec![1.0, 0.0]).unwrap(),
        &TeacherDistribution::new(vec![0.5, 0.5]).unwrap(),
    )
    .unwrap();
    assert!((kl - std::f64::consts::LN_2).abs() < 1e-12, "{kl}");

    for c in [2usize, 5, 10, 64] {
        let uniform = vec![1.0 / c as f64; c];
        let p = StudentDistribution::new(uniform.clone()).unwrap();
        let q = TeacherDistribution::new(uniform).unwrap();
        // each half of the cross-entropy is ln C
        let ce = glac_ce_loss(&p, &q, c - 1).unwrap();
        assert!((ce - 2.0 * (c as f64).ln()).abs() < 1e-12, "C={c}: {ce}");
    }
    let onehot = vec![0.0, 0.0, 1.0];
    let ce = glac_ce_loss(
        &StudentDistribution::new(onehot.clone()).unwrap(),
        &TeacherDistribution::new(onehot).unwrap(),
        2,
    )
    .unwrap();
    assert!(ce.abs() < 1e-7, "{ce}");
}

#[test]
fn kl_logit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z: Vec<f64> = (0..CLASSES).map(|_| StandardNormal.sample(&mut rng)).collect();
    let qz: Vec<f64> = (0..CLASSES).map(|_| StandardNormal.sample(&mut rng)).collect();
    let q = TeacherDistribution::new(dcmatch::softmax(&qz, 1.0)).unwrap();
    let tau = 1.7;
    let kl_at = |z: &[f64]| kl_guidance_loss(&StudentDistribution::new(dcmatch::softmax(z, tau)).unwrap(), &q).unwrap();
    let grad = kl_logit_grad(&StudentDistribution::new(dcmatch::softmax(&z, tau)).unwrap(), &q, tau).unwrap();
    for i in 0..CLASSES {
        let (mut up, mut down) = (z.clone(), z.clone());
        up[i] += 1e-5;
        down[i] -= 1e-5;
        let numeric = (kl_at(&up) - kl_at(&down)) / 2e-5;
        assert!((numeric - grad[i]).abs() < 1e-8, "logit {i}: {} vs {numeric}", grad[i]);
    }
}

/// Eight random frame-averaged alpha-D matrices with random soft teachers.
fn teacher_task(seed: u64) -> (Vec<VideoAlphaDRepresentation>, Vec<TeacherDistribution>, ClassPrototypeBank) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reprs: Vec<VideoAlphaDRepresentation> = (0..8)
        .map(|_| {
            let obs = ObservationMatrix::new(Array2::from_shape_fn((DIM, 10), |_| StandardNormal.sample(&mut rng))).unwrap();
            VideoAlphaDRepresentation::from_array(alpha_d_matrix(&obs, AlphaParam::default()).into_array())
        })
        .collect();
    let teachers = (0..8)
        .map(|_| {
            let z: Vec<f64> = (0..CLASSES).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            TeacherDistribution::new(dcmatch::softmax(&z, 1.0)).unwrap()
        })
        .collect();
    let bank = ClassPrototypeBank::random(CLASSES, DIM, 1e-3, &mut rng).unwrap();
    (reprs, teachers, bank)
}

#[test]
fn teacher_only_training_cuts_kl_by_ninety_percent() {
    for seed in 0..20 {
        let (reprs, teachers, mut bank) = teacher_task(seed);
        let sq = reprs.iter().map(|r| r.as_array().iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / reprs.len() as f64;
        let trace = fit_bank_to_teacher(&reprs, &teachers, &mut bank, 1.0, 4.0 / sq, 200).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "seed {seed}: KL rose");
        let reduction = 1.0 - trace[200] / trace[0];
        assert!(reduction >= 0.9, "seed {seed}: {:.4} -> {:.4}", trace[0], trace[200]);
        // the trace reports the fitted bank's actual loss
        let last: f64 = reprs
            .iter()
            .zip(&teachers)
            .map(|(r, q)| kl_guidance_loss(&glac_student(r, &bank, 1.0).unwrap(), q).unwrap())
            .sum::<f64>()
            / reprs.len() as f64;
        assert!((last - trace[200]).abs() < 1e-12);
    }
}

#[test]
fn fitting_rejects_bad_inputs() {
    let (reprs, teachers, mut bank) = teacher_task(0);
    assert!(matches!(
        fit_bank_to_teacher(&reprs[..3], &teachers, &mut bank, 1.0, 0.1, 5),
        Err(dcmatch::Error::Shape(_))
    ));
    assert!(matches!(
        fit_bank_to_teacher(&reprs, &teachers, &mut bank, 1.0, 0.0, 5),
        Err(dcmatch::Error::Input(_))
    ));
}
