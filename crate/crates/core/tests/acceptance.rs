//! Acceptance run: each criterion checks the library against an independent
//! oracle at its stated tolerance and within its time limit, and prints one
//! PASS/FAIL line. Exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use common::*;
use rck_core::abstraction::{abstract_measure, compose, Abstraction};
use rck_core::config::Model;
use rck_core::rck::embed_measure;
use rck_core::search::search_section;
use rck_core::simulate::{run_simulate, Policy};
use rck_core::*;

type Outcome = std::result::Result<String, String>;

/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `(I − C)⁻¹ diag(σ) (I − C)⁻ᵀ` by general matrix inversion.
fn covariance_oracle(scm: &LinearScm) -> DMatrix<f64> {
    let n = scm.dim();
    let inv = (DMatrix::identity(n, n) - scm.coeffs())
        .try_inverse()
        .expect("unit lower-triangular");
    let d = DMatrix::from_diagonal(scm.noise_var());
    &inv * d * inv.transpose()
}

fn structural_draws(scm: &LinearScm, count: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let n = scm.dim();
    let c = scm.coeffs();
    let mut sum = DVector::zeros(n);
    let mut outer = DMatrix::zeros(n, n);
    let mut x = DVector::zeros(n);
    for _ in 0..count {
        for i in 0..n {
            let z: f64 = r.sample(StandardNormal);
            let mut v = scm.noise_mean()[i] + scm.noise_var()[i].sqrt() * z;
            for j in 0..i {
                v += c[(i, j)] * x[j];
            }
            x[i] = v;
        }
        sum += &x;
        outer.ger(1.0, &x, &x, 1.0);
    }
    let k = count as f64;
    let mean = sum / k;
    let cov = (outer - &mean * mean.transpose() * k) / (k - 1.0);
    (mean, cov)
}

fn chain3_reproduction() -> Outcome {
    let scm = chain3();
    let literal = dmatrix![1.0, 2.0, 6.0; 2.0, 5.0, 15.0; 6.0, 15.0, 46.0];
    let obs = observational_measure(&scm).map_err(|e| e.to_string())?;
    let cov = obs.covariance();
    ensure((&cov - &literal).amax() <= 1e-12, || {
        format!("covariance {cov} differs from literal")
    })?;
    ensure((covariance_oracle(&scm) - &literal).amax() <= 1e-12, || {
        "matrix oracle disagrees with literal".into()
    })?;
    // Sampling error on the 46 entry alone is about 0.065 at 10⁶ draws, so
    // the comparison is relative to each entry's magnitude.
    let (mean, mc) = structural_draws(&scm, 1_000_000, 1);
    let worst = literal
        .iter()
        .zip(mc.iter())
        .map(|(w, g)| (w - g).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max);
    ensure(worst <= 1e-2 && mean.amax() <= 1e-2 * 46f64.sqrt(), || {
        format!("Monte-Carlo relative deviation {worst:.3e}")
    })?;

    let hard = apply_intervention(&scm, &Intervention::hard(&[("X2", 5.0)])).unwrap();
    let m = observational_measure(&hard).unwrap();
    ensure(m.len() == 1, || {
        "interventional measure is not one Gaussian".into()
    })?;
    let g = &m.components()[0];
    ensure(
        (g.mean() - dvector![0.0, 5.0, 15.0]).amax() <= 1e-12
            && (g.cov() - DMatrix::from_diagonal(&dvector![1.0, 0.0, 1.0])).amax() <= 1e-12,
        || format!("do(X2=5) gave mean {} cov {}", g.mean(), g.cov()),
    )?;
    let (mean, mc) = structural_draws(&hard, 1_000_000, 2);
    ensure(
        (mean - dvector![0.0, 5.0, 15.0]).amax() <= 1e-2
            && (mc - DMatrix::from_diagonal(&dvector![1.0, 0.0, 1.0])).amax() <= 1e-2,
        || "do(X2=5) Monte-Carlo moments off".into(),
    )?;
    Ok(format!("MC worst relative deviation {worst:.1e}"))
}

fn naturality_suite() -> Outcome {
    let mut r = rng(2024);
    let mut worst_measure: f64 = 0.0;
    let mut worst_point: f64 = 0.0;
    for case in 0..100 {
        let scm = random_scm(&mut r, 8);
        let obs = observational_measure(&scm).unwrap();
        let base = mixing_map(&scm).unwrap();
        for iv in [random_hard(&mut r, &scm), random_soft(&mut r, &scm)] {
            let eta = intervention_map(&scm, &iv).map_err(|e| e.to_string())?;
            let intervened = apply_intervention(&scm, &iv).unwrap();
            let direct = observational_measure(&intervened).unwrap();
            let pushed = pushforward(&eta, &obs).unwrap();
            ensure(measures_equal(&pushed, &direct, 1e-10), || {
                format!("case {case}: pushforward differs for {iv:?}")
            })?;
            let (a, b) = (&pushed.components()[0], &direct.components()[0]);
            worst_measure = worst_measure
                .max((a.mean() - b.mean()).amax())
                .max((a.cov() - b.cov()).amax());

            let mix_i = mixing_map(&intervened).unwrap();
            for _ in 0..20 {
                let z = DVector::from_fn(scm.dim(), |_, _| r.sample::<f64, _>(StandardNormal));
                let factual = base.apply(&z).unwrap();
                let gap = (eta.apply(&factual).unwrap() - mix_i.apply(&z).unwrap()).amax();
                worst_point = worst_point.max(gap);
                ensure(gap <= 1e-10, || {
                    format!("case {case}: counterfactual off by {gap:e}")
                })?;
            }
        }
    }
    Ok(format!(
        "worst measure entry {worst_measure:.1e}, worst counterfactual {worst_point:.1e}"
    ))
}

fn convex_axioms() -> Outcome {
    let mut r = rng(7);
    for case in 0..1000 {
        let dim = r.random_range(1..=3);
        let a = random_mixture(&mut r, dim, 3);
        let b = random_mixture(&mut r, dim, 3);
        let c = random_mixture(&mut r, dim, 3);
        let l: f64 = r.random_range(0.01..0.99);
        let m: f64 = r.random_range(0.01..0.99);
        let cc =
            |w: f64, x: &GaussianMixture, y: &GaussianMixture| convex_combine(w, x, y).unwrap();
        ensure(measures_equal(&cc(1.0, &a, &b), &a, 1e-10), || {
            format!("case {case}: unit")
        })?;
        ensure(measures_equal(&cc(l, &a, &a), &a, 1e-10), || {
            format!("case {case}: idempotence")
        })?;
        ensure(
            measures_equal(&cc(l, &a, &b), &cc(1.0 - l, &b, &a), 1e-10),
            || format!("case {case}: commutativity"),
        )?;
        let nu = l * (1.0 - m) / (1.0 - l * m);
        ensure(
            measures_equal(
                &cc(l, &cc(m, &a, &b), &c),
                &cc(l * m, &a, &cc(nu, &b, &c)),
                1e-10,
            ),
            || format!("case {case}: associativity"),
        )?;
    }
    Ok("1000 triples".into())
}

fn affinity_and_composition() -> Outcome {
    let mut r = rng(11);
    for case in 0..1000 {
        let n = r.random_range(2..=6);
        let m = r.random_range(1..=n);
        let k = r.random_range(1..=m);
        let inner = Abstraction::from_map(
            independent_scm("U", n),
            independent_scm("V", m),
            AffineMap::new(
                random_block_map(&mut r, n, m),
                DVector::from_fn(m, |_, _| r.random_range(-1.0..1.0)),
            )
            .unwrap(),
        );
        let outer = Abstraction::from_map(
            independent_scm("V", m),
            independent_scm("W", k),
            AffineMap::linear(random_block_map(&mut r, m, k)),
        );
        let a = random_mixture(&mut r, n, 3);
        let b = random_mixture(&mut r, n, 3);
        let l: f64 = r.random();
        let lhs = abstract_measure(&inner, &convex_combine(l, &a, &b).unwrap()).unwrap();
        let rhs = convex_combine(
            l,
            &abstract_measure(&inner, &a).unwrap(),
            &abstract_measure(&inner, &b).unwrap(),
        )
        .unwrap();
        ensure(measures_equal(&lhs, &rhs, 1e-12), || {
            format!("case {case}: abstraction does not commute with mixing")
        })?;
        let both = compose(&outer, &inner).unwrap();
        let stepwise = abstract_measure(&outer, &abstract_measure(&inner, &a).unwrap()).unwrap();
        ensure(
            measures_equal(&abstract_measure(&both, &a).unwrap(), &stepwise, 1e-12),
            || format!("case {case}: composite abstraction differs"),
        )?;
    }
    Ok("1000 cases".into())
}

fn soft_validity() -> Outcome {
    let mut r = rng(5);
    let mut accepted = 0;
    let mut rejected = 0;
    while accepted < 100 {
        let scm = random_scm(&mut r, 8);
        let iv = random_soft(&mut r, &scm);
        let soft = apply_intervention(&scm, &iv).unwrap();
        let sigma = covariance_oracle(&soft);
        let v = is_valid_soft_measure(&scm, &sigma).unwrap();
        ensure(v.valid, || {
            format!("rejected a genuine soft intervention {iv:?}")
        })?;
        for w in &v.witness {
            let truth = soft.coefficient(&w.child, &w.parent).unwrap();
            ensure((w.value - truth).abs() <= 1e-8, || {
                format!(
                    "recovered {} for {}<-{}, expected {truth}",
                    w.value, w.child, w.parent
                )
            })?;
        }
        accepted += 1;
    }
    while rejected < 100 {
        let scm = random_scm(&mut r, 8);
        let soft = apply_intervention(&scm, &random_soft(&mut r, &scm)).unwrap();
        let i = r.random_range(0..scm.dim());
        let mut var = soft.noise_var().clone();
        var[i] *= r.random_range(1.5..3.0);
        let rescaled = LinearScm::new(
            soft.variables().to_vec(),
            soft.coeffs().clone(),
            soft.noise_mean().clone(),
            var,
        )
        .unwrap();
        let v = is_valid_soft_measure(&scm, &covariance_oracle(&rescaled)).unwrap();
        ensure(!v.valid, || "accepted a noise-rescaled covariance".into())?;
        rejected += 1;
    }
    Ok(format!("{accepted} accepted, {rejected} rejected"))
}

fn working_example() -> Outcome {
    let model = fixture("chain_abc.json");
    let sheaf = &model.sheaf;
    let f = |n: &str, e: &str| sheaf.restriction(n, e).unwrap().matrix().clone();
    let g = |n: &str, e: &str| sheaf.extension(n, e).unwrap().matrix().clone();

    let soft = Intervention::soft(&[("A2", "A1", 0.3)]);
    let a = sheaf.node_stalk("A").unwrap();
    let ck = generate_ck(a, std::slice::from_ref(&soft)).unwrap();
    let sigma_a = [
        covariance_oracle(a),
        covariance_oracle(&apply_intervention(a, &soft).unwrap()),
    ];
    for (edges, target) in [(&["X"][..], "B"), (&["X", "Y"][..], "C")] {
        let path = PathQuery::new("A", target, edges);
        let family = rck_family(sheaf, &path, &ck).map_err(|e| e.to_string())?;
        for (k, s) in sigma_a.iter().enumerate() {
            let sigma_ab =
                g("B", "X") * (f("A", "X") * s * f("A", "X").transpose()) * g("B", "X").transpose();
            let want = if target == "B" {
                sigma_ab
            } else {
                g("C", "Y")
                    * (f("B", "Y") * sigma_ab * f("B", "Y").transpose())
                    * g("C", "Y").transpose()
            };
            let got = family[k].covariance();
            ensure((&got - &want).amax() <= 1e-12, || {
                format!("A→{target} measure {k}: {got} vs sandwich {want}")
            })?;
            ensure(family[k].mean().amax() <= 1e-12, || "nonzero mean".into())?;
        }
    }

    let c0 = Cochain0::observational(sheaf).unwrap();
    let verdict = is_global_section(sheaf, &c0, 1e-10).unwrap();
    ensure(verdict.is_section, || {
        format!("observational cochain rejected: {:?}", verdict.residuals)
    })?;
    for (node, edge) in sheaf.network().incidences() {
        // Adds 0.1 to the projected variance on this incidence only.
        let ext = g(&node, &edge);
        let mut values = c0.values.clone();
        let v = &values[&node].components()[0];
        let bumped =
            GaussianMixture::normal(v.mean().clone(), v.cov() + &ext * ext.transpose() * 0.1)
                .unwrap();
        values.insert(node.clone(), bumped);
        let perturbed = Cochain0::new(values);
        let projected = pushforward(
            sheaf.restriction(&node, &edge).unwrap(),
            &perturbed.values[&node],
        )
        .unwrap();
        let original =
            pushforward(sheaf.restriction(&node, &edge).unwrap(), &c0.values[&node]).unwrap();
        ensure(
            ((projected.covariance() - original.covariance()).amax() - 0.1).abs() < 1e-12,
            || format!("perturbation on {node} ⊴ {edge} is not +0.1"),
        )?;
        ensure(
            !is_global_section(sheaf, &perturbed, 1e-10)
                .unwrap()
                .is_section,
            || format!("+0.1 on {node} ⊴ {edge} still a section"),
        )?;
    }
    Ok("sandwiches match, perturbations detected".into())
}

fn embedded_costalk() -> Outcome {
    let mut r = rng(13);
    let mut incidences = 0;
    for name in ["chain_abc.json", "square_cycle.json"] {
        let model: Model = fixture(name);
        ensure(model.report.is_clean(), || {
            format!("{name} does not validate")
        })?;
        let sheaf = &model.sheaf;
        for (node, edge) in sheaf.network().incidences() {
            let dim = sheaf.edge_stalk(&edge).unwrap().dim();
            let restriction = sheaf.restriction(&node, &edge).unwrap();
            for _ in 0..1000 {
                let chi = random_mixture(&mut r, dim, 3);
                let back = pushforward(
                    restriction,
                    &embed_measure(sheaf, &node, &edge, &chi).unwrap(),
                )
                .unwrap();
                ensure(measures_equal(&back, &chi, 1e-10), || {
                    format!("{name}: {node} ⊴ {edge} round trip differs")
                })?;
            }
            incidences += 1;
        }
    }
    Ok(format!("{incidences} incidences"))
}

fn section_search() -> Outcome {
    let model = fixture("chain_abc.json");
    let scenario = model.scenario("greedy").unwrap();
    let Policy::GreedyLocal { free } = &scenario.policy else {
        return Err("greedy scenario has the wrong policy".into());
    };
    let start = scenario.start_models(&model.sheaf).unwrap();
    let mut worst: f64 = 0.0;
    for seed in [1, 2, 3, 11, 42] {
        let run =
            || search_section(&model.sheaf, &start, free, seed, 10_000).map_err(|e| e.to_string());
        let a = run()?;
        ensure(a.initial_energy > 1e-2, || {
            "start is already a section".into()
        })?;
        ensure(a.energy <= 1e-8 && a.evaluations <= 10_000, || {
            format!(
                "seed {seed}: energy {:e} after {} evaluations",
                a.energy, a.evaluations
            )
        })?;
        ensure(a == run()?, || format!("seed {seed}: not deterministic"))?;
        worst = worst.max(a.energy);
    }
    for seed in [0, 7, 99] {
        let mut s = scenario.clone();
        s.seed = seed;
        let t = run_simulate(&model.sheaf, &s).map_err(|e| e.to_string())?;
        ensure(t.energies.windows(2).all(|w| w[1] <= w[0]), || {
            format!("seed {seed}: greedy energy increased: {:?}", t.energies)
        })?;
    }
    Ok(format!("worst final energy {worst:.1e}"))
}

fn path_dependence() -> Outcome {
    let model = fixture("square_cycle.json");
    let sheaf = &model.sheaf;
    let chi = Cochain0::observational(sheaf).unwrap().values["A"].clone();
    let via_b = relative_measure(sheaf, &PathQuery::new("A", "C", &["AB", "BC"]), &chi).unwrap();
    let via_d = relative_measure(sheaf, &PathQuery::new("A", "C", &["AD", "DC"]), &chi).unwrap();
    let d = mixture_distance(&via_b, &via_d).unwrap();
    // Via B the image is diag(1, 0), via D diag(0, 4): W2² = 1 + 4.
    ensure((d - 5f64.sqrt()).abs() <= 1e-10 && d > 0.1, || {
        format!("distance {d}, expected √5")
    })?;
    Ok(format!("distance {d:.6}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "chain3 observational and do(X2=5) measures",
            5,
            chain3_reproduction,
        ),
        (
            "intervention naturality and counterfactuals",
            30,
            naturality_suite,
        ),
        ("convex-space axioms", 10, convex_axioms),
        (
            "abstraction affinity and composition",
            10,
            affinity_and_composition,
        ),
        ("soft-intervention validity", 10, soft_validity),
        ("A-B-C working example", 5, working_example),
        ("embed-then-project identity", 10, embedded_costalk),
        ("section search and greedy descent", 60, section_search),
        ("path dependence on the square cycle", 5, path_dependence),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let limit = Duration::from_secs(*limit);
        let timing = format!("{:.2} s of {} s", elapsed.as_secs_f64(), limit.as_secs());
        match outcome {
            Ok(detail) if elapsed < limit => {
                println!("criterion {} {name}: PASS ({timing}; {detail})", i + 1)
            }
            Ok(_) => {
                failed += 1;
                println!(
                    "criterion {} {name}: FAIL (over time limit, {timing})",
                    i + 1
                );
            }
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({timing}; {why})", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
