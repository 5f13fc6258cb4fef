//! Acceptance criteria, one PASS/FAIL line each. Oracles are computed here
//! with plain nalgebra decompositions, brute force or sampling, not with the
//! library's own kernels.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use invforge::cli::{parse_result, VERIFY_TOL};
use invforge::numerics::{is_psd, SymMatrix};
use invforge::sdp::{residuals, solve, AffineBlock, SdpProblem, SdpStatus, SolveOptions};
use invforge::sos::{gram_of_quadratic, QuadraticPolynomial};
use invforge::synthesis::{
    build_program10, build_program9, solve_program10_closed_form, Ellipsoid, LinearSystem,
    Program9Layout, SynthesisConfig, SynthesisStatus,
};
use invforge::verify::{check_containment, theorem1_check};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn problems_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn eig(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

fn eig_min(m: &DMatrix<f64>) -> f64 {
    eig(m)[0]
}

fn eig_max(m: &DMatrix<f64>) -> f64 {
    *eig(m).last().unwrap()
}

/// `λ_max(P⁻¹M)` through `L⁻¹ M L⁻ᵀ` with nalgebra's Cholesky.
fn gen_eig_oracle(m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let l = p.clone().cholesky().expect("P ≻ 0").l();
    let li = l.try_inverse().unwrap();
    eig_max(&(&li * m * li.transpose()))
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

fn sym(m: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::with_tolerance(m.clone(), 1e-9).unwrap()
}

/// Plain RK4 on `ẋ = Fx`, returning `min (l − xᵀPx)` over the samples.
fn rk4_min_barrier(
    f: &DMatrix<f64>,
    p: &DMatrix<f64>,
    l: f64,
    x0: &DVector<f64>,
    dt: f64,
    horizon: f64,
) -> f64 {
    let steps = (horizon / dt).round() as usize;
    let mut x = x0.clone();
    let mut worst = l - (x.transpose() * p * &x)[0];
    for _ in 0..steps {
        let k1 = f * &x;
        let k2 = f * (&x + &k1 * (0.5 * dt));
        let k3 = f * (&x + &k2 * (0.5 * dt));
        let k4 = f * (&x + &k3 * dt);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        worst = worst.min(l - (x.transpose() * p * &x)[0]);
    }
    worst
}

fn criterion_1() -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let problem = problems_dir().join("unit_disc.json");
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_invforge"))
        .arg("synth")
        .arg(&problem)
        .arg("--out")
        .arg(out.path())
        .args(["--simulate", "100", "10"])
        .output()
        .unwrap();
    let wall = start.elapsed().as_secs_f64();
    let code = status.status.code();
    if code != Some(0) {
        return outcome(
            false,
            format!(
                "synth exited {code:?}: {}",
                String::from_utf8_lossy(&status.stderr)
            ),
        );
    }
    let result = parse_result(&out.path().join("result.json")).unwrap();
    let c = result.certificate.expect("certificate present");
    let n = c.p.len();
    let p = DMatrix::from_fn(n, n, |i, j| c.p[i][j]);
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.7, -0.4, -0.6]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let m = &p * &b * b.transpose() * &p;
    let inv = eig_min(&(-(&p * &a) - a.transpose() * &p + &m * (2.0 * c.zeta)));
    let cont = c.l * eig_max(&p.clone().try_inverse().unwrap());
    let ctrl = c.zeta * c.zeta * c.l * gen_eig_oracle(&m, &p);

    // uniform starts by rejection from the bounding box of {xᵀPx ≤ l}
    let pinv = p.clone().try_inverse().unwrap();
    let half: Vec<f64> = (0..2).map(|i| (c.l * pinv[(i, i)]).sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut starts = Vec::new();
    while starts.len() < 100 {
        let x = DVector::from_fn(2, |i, _| rng.random_range(-half[i]..half[i]));
        if (x.transpose() * &p * &x)[0] <= c.l {
            starts.push(x);
        }
    }
    let k = DMatrix::from_fn(b.ncols(), n, |i, j| c.k[i][j]);
    let closed = &a + &b * &k;
    let sim_min = starts
        .iter()
        .map(|x0| rk4_min_barrier(&closed, &p, c.l, x0, 1e-3, 10.0))
        .fold(f64::INFINITY, f64::min);
    let cli_sim = result
        .verification
        .as_ref()
        .and_then(|v| v.simulation.as_ref())
        .is_some_and(|s| s.passed && s.trajectories == 100);

    let checks = [
        inv >= -1e-6,
        cont <= 1.0 + 1e-6,
        ctrl <= 1.0 + 1e-6,
        sim_min >= -1e-6,
        cli_sim,
        wall < 30.0,
    ];
    outcome(
        checks.iter().all(|c| *c),
        format!(
            "exit 0, l = {:.6e}, ζ = {:.6e}; (a) λ_min = {inv:.3e}; (b) l·λ_max(P⁻¹) = {cont:.6}; \
             (c) ζ²lλ_max(P⁻¹M) = {ctrl:.9}; (d) min b over 100 RK4 runs = {sim_min:.3e}; wall {wall:.2} s",
            c.l, c.zeta
        ),
    )
}

/// Relaxed conditions hold by construction; returns the number of draws
/// where the exact condition fails.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counter = 0;
    let mut first: Option<String> = None;
    let mut skipped = 0;
    for draw in 0..1000 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let a = gaussian(&mut rng, n, n);
        let b = gaussian(&mut rng, n, m);
        let p = random_pd(&mut rng, n, 0.1);
        let noise = gaussian(&mut rng, n, n) * rng.random_range(0.0..1.0);
        let phat = &p * &b * b.transpose() * &p
            + &noise * noise.transpose()
            + DMatrix::identity(n, n) * 1e-6;
        // smallest ζ with 2ζP̂ ⪰ PA + AᵀP, plus slack
        let drift = &p * &a + a.transpose() * &p;
        let need = 0.5 * gen_eig_oracle(&drift, &phat).max(0.0);
        let zeta = need * (1.0 + 1e-6) + 1e-9;
        let sys = LinearSystem::new(a.clone(), b.clone(), 1.0).unwrap();
        match theorem1_check(&sys, &sym(&p), &sym(&phat), zeta) {
            Ok(true) => {}
            Ok(false) => {
                counter += 1;
                if first.is_none() {
                    let exact = eig_min(&(-&drift + &p * &b * b.transpose() * &p * (2.0 * zeta)));
                    first = Some(format!(
                        "draw {draw}: n = {n}, m = {m}, ζ = {zeta:.4}, exact λ_min = {exact:.4e}"
                    ));
                }
            }
            Err(_) => skipped += 1,
        }
    }
    // minimal hand-checked instance: A = 1, B = 0, P = P̂ = 1, ζ = 1
    let tiny =
        LinearSystem::new(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1), 1.0).unwrap();
    let one = SymMatrix::identity(1);
    let tiny_holds = theorem1_check(&tiny, &one, &one, 1.0).unwrap_or(true);
    outcome(
        counter == 0 && skipped == 0 && tiny_holds,
        format!(
            "{counter} counterexamples in 1000 draws ({skipped} precondition rejects); A = 1, B = 0, P = P̂ = ζ = 1 satisfies the exact condition: {tiny_holds}{}",
            first.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    let mut worst_cf = 0.0_f64;
    let mut failures = 0;
    let cases = 60;
    for _ in 0..cases {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let a = gaussian(&mut rng, n, n);
        let b = gaussian(&mut rng, n, m);
        let p = random_pd(&mut rng, n, 0.1);
        let l = 2.0 * (1.0 - rng.random::<f64>());
        let u_max = 4.0 * (1.0 - rng.random::<f64>());
        let sys = LinearSystem::new(a, b.clone(), u_max).unwrap();
        let oracle = u_max / (l * gen_eig_oracle(&(&p * &b * b.transpose() * &p), &p));
        let ps = sym(&p);
        let s = solve(
            &build_program10(&ps, l, &sys).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        if s.status != SdpStatus::Optimal {
            failures += 1;
            continue;
        }
        worst = worst.max((s.y[0] - oracle).abs() / oracle);
        let cf = solve_program10_closed_form(&ps, l, &sys).unwrap();
        worst_cf = worst_cf.max((cf - oracle).abs() / oracle);
    }
    outcome(
        failures == 0 && worst <= 1e-6 && worst_cf <= 1e-6,
        format!("{cases} instances, {failures} non-optimal; max rel. error SDP vs oracle {worst:.2e}, closed form vs oracle {worst_cf:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SynthesisConfig::default();
    let zetas = [0.05, 0.5, 5.0];
    let mut systems = 0;
    let mut violations = 0;
    let mut failures = 0;
    let mut worst_drop = 0.0_f64;
    while systems < 20 {
        let n = rng.random_range(2..=3);
        let m = rng.random_range(1..=2);
        let sys =
            LinearSystem::new(gaussian(&mut rng, n, n), gaussian(&mut rng, n, m), 1.0).unwrap();
        if sys.controllability_rank() < n {
            continue;
        }
        systems += 1;
        let q = -random_pd(&mut rng, n, 0.3);
        let s = QuadraticPolynomial::new(sym(&q), DVector::zeros(n), rng.random_range(0.5..2.0))
            .unwrap();
        let lay = Program9Layout { n };
        let mut ls = Vec::new();
        for z in zetas {
            let sol = solve(&build_program9(&sys, &s, z, &cfg).unwrap(), &cfg.solver).unwrap();
            if sol.status != SdpStatus::Optimal {
                failures += 1;
                continue;
            }
            ls.push(sol.y[lay.l()]);
        }
        for w in ls.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
            if w[1] < w[0] - 1e-7 {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0 && failures == 0,
        format!("20 controllable systems × ζ ∈ {{0.05, 0.5, 5}}: {violations} decreases beyond 1e-7, {failures} non-optimal solves, largest drop {worst_drop:.2e}"),
    )
}

fn scalar(v: f64) -> SymMatrix {
    SymMatrix::from_diagonal(&[v])
}

/// Bounded random LP `max bᵀy s.t. Gy ≤ h, |y_i| ≤ 5`, origin strictly feasible.
fn random_lp(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.random_range(1..=3);
    let rows = rng.random_range(1..=4);
    let b = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut g: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let mut h: Vec<f64> = (0..rows).map(|_| rng.random_range(0.5..3.0)).collect();
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; n];
            row[i] = sign;
            g.push(row);
            h.push(5.0);
        }
    }
    (b, g, h)
}

fn lp_vertex_enumeration(b: &[f64], g: &[Vec<f64>], h: &[f64]) -> f64 {
    let n = b.len();
    let rows = g.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << rows) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let active: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        let a = DMatrix::from_fn(n, n, |r, c| g[active[r]][c]);
        let rhs = DVector::from_fn(n, |r, _| h[active[r]]);
        let Some(y) = a.lu().solve(&rhs) else {
            continue;
        };
        let feasible = g.iter().zip(h).all(|(row, hi)| {
            row.iter().zip(y.iter()).map(|(gi, v)| gi * v).sum::<f64>() <= hi + 1e-9
        });
        if feasible {
            best = best.max(b.iter().zip(y.iter()).map(|(bi, v)| bi * v).sum());
        }
    }
    best
}

fn criterion_5() -> Outcome {
    let opts = SolveOptions::default();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, p: &SdpProblem, expect: Option<(usize, f64)>| {
        let s = solve(p, &opts).unwrap();
        let r = residuals(p, &s).unwrap();
        let mut good = s.status == SdpStatus::Optimal
            && s.duality_gap <= 1e-8
            && r.primal_inf <= 1e-7
            && r.dual_inf <= 1e-7
            && r.gap <= 1e-7;
        if let Some((var, val)) = expect {
            good &= (s.y[var] - val).abs() <= 1e-7;
        }
        ok &= good;
        notes.push(format!("{name}: {:?} gap {:.1e}", s.status, s.duality_gap));
    };

    // min x s.t. [[x, 1], [1, x]] ⪰ 0; brute force over a grid gives x* = 1
    let brute = (0..=40_000)
        .map(|k| -2.0 + k as f64 * 1e-4)
        .find(|&x| eig_min(&DMatrix::from_row_slice(2, 2, &[x, 1.0, 1.0, x])) >= 0.0)
        .unwrap();
    let mut p1 = SdpProblem::new(1).maximize(0, -1.0);
    p1.add_block(
        AffineBlock::new(
            "lmi",
            SymMatrix::from_row_slice(2, &[0.0, 1.0, 1.0, 0.0]).unwrap(),
        )
        .with_term(0, SymMatrix::identity(2)),
    );
    check("x* = 1", &p1, Some((0, brute)));

    let mut p2 = SdpProblem::new(3);
    p2.add_block(
        AffineBlock::new("X", SymMatrix::zeros(2))
            .with_term(0, SymMatrix::from_diagonal(&[1.0, 0.0]))
            .with_term(
                1,
                SymMatrix::from_row_slice(2, &[0.0, 1.0, 1.0, 0.0]).unwrap(),
            )
            .with_term(2, SymMatrix::from_diagonal(&[0.0, 1.0])),
    );
    p2.add_equality(vec![(0, 1.0), (2, 1.0)], 1.0);
    check("trace-one feasibility", &p2, None);

    let mut p3 = SdpProblem::new(2).maximize(0, 1.0);
    p3.add_block(
        AffineBlock::new("gap", SymMatrix::zeros(2))
            .with_term(0, SymMatrix::identity(2).scale(-1.0))
            .with_term(1, SymMatrix::identity(2)),
    );
    p3.add_block(AffineBlock::new("sigma<=2", scalar(2.0)).with_term(1, scalar(-1.0)));
    p3.add_block(AffineBlock::new("sigma>=0", scalar(0.0)).with_term(1, scalar(1.0)));
    p3.add_block(AffineBlock::new("t>=0", scalar(0.0)).with_term(0, scalar(1.0)));
    check("t* = 2", &p3, Some((0, 2.0)));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    let cases = 40;
    for _ in 0..cases {
        let (b, g, h) = random_lp(&mut rng);
        let n = b.len();
        let mut p = SdpProblem::new(n);
        p.objective = b.clone();
        let mut blk = AffineBlock::new("lp", SymMatrix::from_diagonal(&h));
        for j in 0..n {
            let col: Vec<f64> = g.iter().map(|row| -row[j]).collect();
            blk.add_term(j, SymMatrix::from_diagonal(&col));
        }
        p.add_block(blk);
        let s = solve(&p, &opts).unwrap();
        let want = lp_vertex_enumeration(&b, &g, &h);
        if s.status != SdpStatus::Optimal {
            worst = f64::INFINITY;
        } else {
            worst = worst.max((s.objective_value - want).abs() / want.abs().max(1.0));
        }
    }
    ok &= worst <= 1e-7;
    outcome(
        ok,
        format!(
            "{}; {cases} diagonal SDPs vs vertex enumeration, max error {worst:.2e}",
            notes.join(", ")
        ),
    )
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n).qr().q()
}

/// Minimum of `p` over a dense grid on `[−10, 10]ⁿ`, refined by projected
/// gradient descent from the best grid point.
fn grid_min(q: &DMatrix<f64>, lin: &[f64], c: f64) -> f64 {
    let n = lin.len();
    let per_axis = [2001usize, 201, 41, 17][n - 1];
    let f = |x: &[f64]| {
        let mut v = c;
        for i in 0..n {
            v += lin[i] * x[i];
            for j in 0..n {
                v += x[i] * q[(i, j)] * x[j];
            }
        }
        v
    };
    let step = 20.0 / (per_axis - 1) as f64;
    let mut idx = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut arg = vec![0.0; n];
    let mut x = vec![0.0; n];
    loop {
        for i in 0..n {
            x[i] = -10.0 + idx[i] as f64 * step;
        }
        let v = f(&x);
        if v < best {
            best = v;
            arg.clone_from(&x);
        }
        let mut k = 0;
        loop {
            if k == n {
                break;
            }
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    let lr = 1.0 / (2.0 * q.norm() + 1.0);
    let mut y = arg;
    for _ in 0..2000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| lin[i] + 2.0 * (0..n).map(|j| q[(i, j)] * y[j]).sum::<f64>())
            .collect();
        for i in 0..n {
            y[i] = (y[i] - lr * grad[i]).clamp(-10.0, 10.0);
        }
        best = best.min(f(&y));
    }
    best
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut disagreements = 0;
    let mut sos = 0;
    let mut first = None;
    for case in 0..500 {
        let n = rng.random_range(1..=4);
        let u = random_orthogonal(&mut rng, n);
        let lam: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.random_range(0.2..2.0);
                if rng.random_bool(0.75) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let q = &u * DMatrix::from_diagonal(&DVector::from_vec(lam)) * u.transpose();
        let lin: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(-1.0..3.0);
        let p = QuadraticPolynomial::new(sym(&q), DVector::from_vec(lin.clone()), c).unwrap();
        let verdict = is_psd(&gram_of_quadratic(&p), 0.0).unwrap();
        let min = grid_min(&q, &lin, c);
        let agree = if verdict { min >= -1e-9 } else { min < 1e-6 };
        sos += verdict as usize;
        if !agree {
            disagreements += 1;
            first.get_or_insert(format!(
                "case {case}: n = {n}, Gram PSD = {verdict}, grid min = {min:.3e}"
            ));
        }
    }
    outcome(
        disagreements == 0,
        format!(
            "500 quadratics ({sos} SOS), {disagreements} disagreements with the grid oracle{}",
            first.map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn criterion_7() -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_invforge"))
        .arg("synth")
        .arg(problems_dir().join("unstable_no_input.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    let code = status.status.code();
    let result = parse_result(&out.path().join("result.json")).unwrap();
    let no_cert = matches!(
        result.status,
        SynthesisStatus::ControlIneffective | SynthesisStatus::Infeasible
    ) && result.certificate.is_none();

    let ell = Ellipsoid::new(SymMatrix::identity(2), 2.0).unwrap();
    let contained =
        check_containment(&ell, &QuadraticPolynomial::ball(2, 1.0), VERIFY_TOL).unwrap();
    let oracle = 2.0 * eig_max(&DMatrix::identity(2, 2));
    outcome(
        code == Some(2) && no_cert && !contained && oracle > 1.0,
        format!(
            "A = I, B = 0: exit {code:?}, status {:?}; P = I, l = 2 vs unit disc: containment {contained} (l·λ_max(P⁻¹) = {oracle})",
            result.status
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("end-to-end unit disc example", criterion_1),
        ("relaxed conditions imply exact invariance", criterion_2),
        ("gain program vs closed form", criterion_3),
        ("ellipsoid program monotone in ζ", criterion_4),
        ("SDP solver correctness", criterion_5),
        ("SOS exactness vs grid", criterion_6),
        ("negative controls", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        failed += (!result.pass) as usize;
        println!(
            "{tag} criterion {} ({name}) [{:.1} s]: {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
