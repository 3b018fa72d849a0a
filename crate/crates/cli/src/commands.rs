use std::collections::HashMap;

use anyhow::{anyhow, bail, Context, Result};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdmaps::ising::{change_of_variables_residual, dressed_series, ising_series, IsingIndex};
use sdmaps::mc::{run, McConfig, Model, Requests};
use sdmaps::oracle::count_rooted_planar;
use sdmaps::rational::{format_rational, parse_rational, to_f64};
use sdmaps::{
    bms_series, count_by_genus, count_m0, count_planar, parse_potential, parse_word, symmetrized_count_with,
    Convention, EnumOptions, EquilibriumMeasure, IsingCouplings, IsingNormalization, MapCountTable, Monomial,
    MultiIndex, OracleError, ParameterAssignment, Potential, StarList, StarSpec, TruncationBound,
};

use crate::report::RunReport;
use crate::{IsingArgs, McArgs, ModelArgs};

/// Largest `i` in any `x<i>` of the given texts.
fn infer_alphabet(texts: &[&str]) -> usize {
    let mut m = 1;
    for text in texts {
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'x' {
                let digits: String = bytes[i + 1..]
                    .iter()
                    .take_while(|b| b.is_ascii_digit())
                    .map(|&b| b as char)
                    .collect();
                if let Ok(c) = digits.parse::<usize>() {
                    m = m.max(c);
                }
                i += digits.len();
            }
            i += 1;
        }
    }
    m
}

fn rational(text: &str) -> Result<BigRational> {
    parse_rational(text.trim()).map_err(|e| anyhow!("`{text}`: {e}"))
}

fn rationals(text: &str) -> Result<Vec<BigRational>> {
    text.split(',').map(rational).collect()
}

struct Loaded {
    potential: Potential,
    params: Option<ParameterAssignment>,
    alphabet: usize,
}

impl Loaded {
    fn spec(&self) -> &StarSpec {
        &self.potential.spec
    }

    fn params(&self) -> Result<&ParameterAssignment> {
        self.params.as_ref().ok_or_else(|| {
            anyhow!(
                "unbound parameters {:?}; bind them with --set NAME=VALUE",
                self.potential.parameter_names()
            )
        })
    }

    fn describe(&self) -> String {
        let mut s = if self.potential.spec.is_empty() {
            "0".to_string()
        } else {
            self.potential.to_string()
        };
        s.push_str(&format!(" over {} color(s)", self.alphabet));
        if let Some(p) = &self.params {
            if !p.is_empty() {
                let values: Vec<String> = p.values().iter().map(format_rational).collect();
                s.push_str(&format!(" at t = ({})", values.join(", ")));
            }
        }
        s
    }
}

/// Parses the model. Parameters stay unbound when no `--set` is given and the
/// potential has symbols; commands that need values ask for them.
fn load(model: &ModelArgs, extra: &[&str]) -> Result<Loaded> {
    let mut texts = vec![model.potential.as_str()];
    texts.extend_from_slice(extra);
    let m = model.alphabet.unwrap_or_else(|| infer_alphabet(&texts));
    let potential = if model.potential.trim() == "0" {
        Potential {
            spec: StarSpec::empty(m),
            params: Vec::new(),
        }
    } else {
        parse_potential(&model.potential, m).with_context(|| format!("potential `{}`", model.potential))?
    };
    let mut bindings = HashMap::new();
    for s in &model.set {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects NAME=VALUE, got `{s}`"))?;
        bindings.insert(name.trim().to_string(), rational(value)?);
    }
    let params = if bindings.is_empty() && !potential.parameter_names().is_empty() {
        None
    } else {
        Some(potential.bind(&bindings)?)
    };
    Ok(Loaded {
        potential,
        params,
        alphabet: m,
    })
}

fn word(text: &str, m: usize) -> Result<Monomial> {
    parse_word(text, m).with_context(|| format!("word `{text}`"))
}

fn star_list(text: &str, m: usize) -> Result<Vec<Monomial>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| word(s.trim(), m))
        .collect()
}

fn multi_index(text: &str, n: usize) -> Result<MultiIndex> {
    let k: Vec<u32> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| anyhow!("--k expects non-negative integers, got `{s}`"))
        })
        .collect::<Result<_>>()?;
    if k.len() != n {
        bail!("--k has {} entries but the potential has {n} terms", k.len());
    }
    Ok(MultiIndex::new(k))
}

fn multiset(spec: &StarSpec, k: &MultiIndex) -> Vec<(Monomial, usize)> {
    k.entries()
        .iter()
        .enumerate()
        .map(|(j, &kj)| (spec.word(j).clone(), kj as usize))
        .collect()
}

fn pruned() -> EnumOptions {
    EnumOptions {
        prune_nonplanar: true,
        ..EnumOptions::default()
    }
}

pub fn count(model: &ModelArgs, root: &str, k: &str, oracle: bool) -> Result<RunReport> {
    let loaded = load(model, &[root])?;
    let spec = loaded.spec().clone();
    let root = word(root, loaded.alphabet)?;
    let k = multi_index(k, spec.len())?;
    let doubled = MapCountTable::new(spec.clone());
    let plain = MapCountTable::with_convention(spec.clone(), Convention::Plain);
    let m = doubled.map_count(&root, &k)?;
    let m0 = plain.map_count(&root, &k)?;
    let mut report = RunReport::new(loaded.describe(), &["quantity", "value"]);
    report.row(["root".to_string(), root.to_string()]);
    report.row(["k".to_string(), k.to_string()]);
    report.row(["M".to_string(), m.to_string()]);
    report.row(["M0".to_string(), m0.to_string()]);
    for (name, table) in [("rooted M", &doubled), ("rooted M0", &plain)] {
        match table.rooted_count(&root, &k) {
            Ok(v) => report.row([name.to_string(), v.to_string()]),
            Err(e) => {
                report.row([name.to_string(), "non-integral".to_string()]);
                report.note(format!("{name}: {e}"));
            }
        }
    }
    report.note("M counts stars of type q or q* (q + q* in the potential); M0 counts stars of type q only");
    if oracle {
        let root_arg = Some(&root);
        let brute_m = symmetrized_count_with(root_arg, &spec, &k, &pruned())?;
        let brute_m0 = BigUint::from(count_m0(root_arg, &multiset(&spec, &k))?);
        report.row(["M (oracle)".to_string(), brute_m.to_string()]);
        report.row(["M0 (oracle)".to_string(), brute_m0.to_string()]);
        report.check("M", brute_m == m, format!("recursion {m}, gluing {brute_m}"));
        report.check("M0", brute_m0 == m0, format!("recursion {m0}, gluing {brute_m0}"));
        if !root.is_unit() {
            let stars = StarList::from_multiset(Some(&root), &multiset(&spec, &k));
            let brute = BigUint::from(count_rooted_planar(&stars, &EnumOptions::default())?);
            report.row(["rooted M0 (oracle)".to_string(), brute.to_string()]);
            if let Ok(v) = plain.rooted_count(&root, &k) {
                report.check("rooted M0", v == brute, format!("recursion {v}, gluing {brute}"));
            }
        }
    }
    Ok(report)
}

/// Shortest representation that reads back to the same `f64`.
fn float(x: f64) -> String {
    format!("{x:?}")
}

fn approx(x: &BigRational) -> String {
    float(to_f64(x))
}

pub fn series(
    model: &ModelArgs,
    roots: &[String],
    order: u32,
    tight: bool,
    free_energy: bool,
    entropy: bool,
) -> Result<RunReport> {
    let texts: Vec<&str> = roots.iter().map(String::as_str).collect();
    let loaded = load(model, &texts)?;
    let params = loaded.params()?.clone();
    let spec = loaded.spec().clone();
    let table = MapCountTable::new(spec.clone());
    let bound = if tight {
        TruncationBound::tightened(&spec)
    } else {
        TruncationBound::default_for(&spec)
    };
    let mut report = RunReport::new(loaded.describe(), &["quantity", "index", "exact", "approx", "tail"]);
    report.note(format!(
        "growth constants A = {}, B = {} ({})",
        format_rational(&bound.a),
        format_rational(&bound.b),
        if tight { "tightened" } else { "default" }
    ));
    if !bound.certifies(&params) {
        report.note("couplings lie outside the certified disc: tails are uncertified");
    }
    for text in roots {
        let w = word(text, loaded.alphabet)?;
        let v = table.series_eval(&w, &params, order, &bound)?;
        let tail = v.tail.as_ref().map_or("uncertified".to_string(), approx);
        report.row([
            "tau".to_string(),
            w.to_string(),
            format_rational(&v.partial),
            approx(&v.partial),
            tail,
        ]);
    }
    if free_energy || entropy {
        let f = table.free_energy_series(&params, order)?;
        if free_energy {
            for (k, c) in &f.coefficients {
                report.row([
                    "M".to_string(),
                    k.to_string(),
                    c.to_string(),
                    String::new(),
                    String::new(),
                ]);
            }
            report.row([
                "F".to_string(),
                format!("|k| <= {order}"),
                format_rational(&f.partial),
                approx(&f.partial),
                String::new(),
            ]);
        }
        if entropy {
            let e = table.entropy_series(&params, order)?;
            report.row([
                "chi".to_string(),
                format!("|k| <= {order}"),
                format_rational(&e.partial),
                approx(&e.partial),
                String::new(),
            ]);
            report.row([
                "tau(V)".to_string(),
                format!("|k| <= {}", order.saturating_sub(1)),
                format_rational(&e.potential_term),
                approx(&e.potential_term),
                String::new(),
            ]);
            let split = e.partial == &e.potential_term + &e.free_energy;
            report.check(
                "chi = tau(V) + F",
                split,
                "entropy series against the potential and free-energy pieces",
            );
        }
    }
    Ok(report)
}

pub fn oracle(stars: &str, root: Option<&str>, alphabet: Option<usize>, prune: bool) -> Result<RunReport> {
    let mut texts = vec![stars];
    texts.extend(root);
    let m = alphabet.unwrap_or_else(|| infer_alphabet(&texts));
    let mut words = Vec::new();
    if let Some(r) = root {
        words.push(word(r, m)?);
    }
    words.extend(star_list(stars, m)?);
    let list = StarList::new(words);
    let opts = if prune { pruned() } else { EnumOptions::default() };
    let mut report = RunReport::new(
        format!(
            "stars [{stars}]{}",
            root.map_or(String::new(), |r| format!(" rooted at {r}"))
        ),
        &["quantity", "value"],
    );
    report.row(["gluings".to_string(), list.gluing_count().to_string()]);
    report.row(["planar".to_string(), count_planar(&list, &opts)?.to_string()]);
    if root.is_some() {
        report.row([
            "rooted planar".to_string(),
            count_rooted_planar(&list, &opts)?.to_string(),
        ]);
    }
    Ok(report)
}

pub fn genus(stars: &str, alphabet: Option<usize>) -> Result<RunReport> {
    let m = alphabet.unwrap_or_else(|| infer_alphabet(&[stars]));
    let list = StarList::new(star_list(stars, m)?);
    let census = count_by_genus(&list)?;
    let mut report = RunReport::new(format!("stars [{stars}]"), &["genus", "count"]);
    for (g, c) in &census.counts {
        report.row([g.to_string(), c.to_string()]);
    }
    report.row(["disconnected".to_string(), census.disconnected.to_string()]);
    Ok(report)
}

fn residual_spec(text: &str, m: usize) -> Result<(Monomial, usize)> {
    let (p, color) = text
        .rsplit_once(':')
        .ok_or_else(|| anyhow!("--residual expects P:I, got `{text}`"))?;
    let color: usize = color
        .trim()
        .parse()
        .map_err(|_| anyhow!("color in `{text}` is not an integer"))?;
    if color == 0 || color > m {
        bail!("color {color} in `{text}` is outside 1..={m}");
    }
    Ok((word(p.trim(), m)?, color - 1))
}

pub fn mc(args: &McArgs) -> Result<RunReport> {
    let mut texts: Vec<&str> = args.words.iter().map(String::as_str).collect();
    texts.extend(args.residuals.iter().map(String::as_str));
    let loaded = load(&args.model, &texts)?;
    let params = loaded
        .params
        .clone()
        .unwrap_or_else(|| ParameterAssignment::zeros(loaded.spec().len()));
    if loaded.params.is_none() {
        bail!("bind the couplings with --set before sampling");
    }
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            McConfig::parse(&text)?
        }
        None => McConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(c) = &args.cutoff {
        cfg.cutoff = if c == "none" {
            None
        } else {
            Some(c.parse().map_err(|_| anyhow!("--cutoff expects a number or none"))?)
        };
    }
    if args.assert_convex {
        cfg.assert_convex = true;
    }
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.sweeps = args.sweeps.unwrap_or(cfg.sweeps);
    cfg.burn_in = args.burn_in.unwrap_or(cfg.burn_in);
    cfg.chains = args.chains.unwrap_or(cfg.chains);
    cfg.validate()?;
    let model = Model::new(loaded.spec(), &params)?;
    let requests = Requests {
        words: args
            .words
            .iter()
            .map(|w| word(w, loaded.alphabet))
            .collect::<Result<_>>()?,
        residuals: args
            .residuals
            .iter()
            .map(|r| residual_spec(r, loaded.alphabet))
            .collect::<Result<_>>()?,
    };
    let result = run(&model, &cfg, &requests)?;
    let mut report = RunReport::new(loaded.describe(), &["word", "mean", "stderr", "n_samples"]);
    report.seed = Some(cfg.seed);
    for e in &result.moments {
        report.row([
            e.word.to_string(),
            float(e.mean),
            float(e.stderr),
            e.samples.to_string(),
        ]);
    }
    for (p, color, e) in &result.residuals {
        report.row([
            format!("SD[x{}]({p})", color + 1),
            float(e.mean),
            float(e.stderr),
            e.samples.to_string(),
        ]);
    }
    report.note(format!(
        "N = {}, sweeps = {} x {} chain(s) after {} burn-in, cutoff = {}",
        cfg.n,
        cfg.sweeps,
        cfg.chains,
        cfg.burn_in,
        cfg.cutoff.map_or("none".to_string(), float)
    ));
    let acceptance: Vec<String> = result.acceptance.iter().map(|a| format!("{a:.4}")).collect();
    report.note(format!("acceptance per chain: {}", acceptance.join(", ")));
    Ok(report)
}

pub fn onematrix(model: &ModelArgs, moments: usize) -> Result<RunReport> {
    let loaded = load(model, &[])?;
    let params = match &loaded.params {
        Some(p) => p.clone(),
        None => bail!("bind the couplings with --set"),
    };
    let em = EquilibriumMeasure::solve(loaded.spec(), &params)?;
    let mut report = RunReport::new(loaded.describe(), &["quantity", "value"]);
    report.row(["a".to_string(), float(em.a)]);
    report.row(["b".to_string(), float(em.b)]);
    report.row(["residual".to_string(), float(em.residual)]);
    for (i, c) in em.h.0.iter().enumerate() {
        report.row([format!("h[{i}]"), float(*c)]);
    }
    for (k, v) in em.moments(moments).iter().enumerate() {
        report.row([format!("m{k}"), float(*v)]);
    }
    let min_h = em.min_density_factor(1000);
    report.row(["min h".to_string(), float(min_h)]);
    report.check(
        "density non-negative",
        min_h >= 0.0,
        "h sampled at 1001 points of the support",
    );
    Ok(report)
}

fn index_label(idx: &IsingIndex) -> String {
    let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    format!("a=[{}] b=[{}] r={}", join(&idx.a), join(&idx.b), idx.r)
}

pub fn ising(args: &IsingArgs) -> Result<RunReport> {
    let couplings = IsingCouplings {
        t_a: rationals(&args.ta)?,
        t_b: rationals(&args.tb)?,
        c: rational(&args.c)?,
    };
    let root = word(&args.root, 2)?;
    let series = ising_series(&couplings, &root, args.order)?;
    let model = format!(
        "Ising: t_A = ({}), t_B = ({}), c = {}, root {root}",
        args.ta,
        args.tb,
        format_rational(&couplings.c)
    );
    let mut report = RunReport::new(model, &["quantity", "index", "value"]);
    for (idx, v) in &series.coefficients {
        if !v.is_zero() {
            report.row(["coefficient".to_string(), index_label(idx), format_rational(v)]);
        }
    }
    report.row([
        "partial sum".to_string(),
        format!("order {}", args.order),
        format_rational(&series.evaluate(&couplings)),
    ]);
    if args.dressed {
        let dressed = dressed_series(&couplings, &root, args.order)?;
        let mismatches = series
            .coefficients
            .iter()
            .filter(|(idx, v)| &dressed.coefficient(idx) != *v)
            .count();
        report.check(
            "dressed expansion",
            mismatches == 0,
            format!(
                "{} coefficients, {mismatches} differ from the brute-force dressed counts",
                series.coefficients.len()
            ),
        );
    }
    if let Some(u) = &args.bms {
        let u = rational(u)?;
        let sol = bms_series(&u, args.order as usize)?;
        let gf = sol.generating_function(IsingNormalization::InverseSquare);
        for n in 0..=args.order as usize {
            for i in 0..=n {
                let label = format!("x^{i} y^{}", n - i);
                report.row([
                    "P".to_string(),
                    label.clone(),
                    format_rational(&sol.p.coefficient(i, n - i)),
                ]);
                report.row(["I".to_string(), label, format_rational(&gf.coefficient(i, n - i))]);
            }
        }
        report.note("I uses the (1 - u^-2) prefactor; beyond order 0 it does not match brute-force rooted counts");
    }
    if let Some(zc) = &args.change_of_variables {
        let v = rationals(zc)?;
        if v.len() != 2 {
            bail!("--change-of-variables expects Z,C");
        }
        let r = change_of_variables_residual(&v[0], &v[1])?;
        report.row([
            "change of variables residual".to_string(),
            zc.clone(),
            format_rational(&r),
        ]);
        report.check(
            "change of variables",
            r.is_zero(),
            format!("exact residual {}", format_rational(&r)),
        );
    }
    Ok(report)
}

fn words_up_to(m: usize, degree: usize) -> Vec<Monomial> {
    let mut out = vec![Monomial::unit()];
    let mut layer = vec![Vec::<u8>::new()];
    for _ in 0..degree {
        let next: Vec<Vec<u8>> = layer
            .iter()
            .flat_map(|w| (0..m as u8).map(move |c| [w.as_slice(), &[c]].concat()))
            .collect();
        out.extend(next.iter().cloned().map(Monomial::new));
        layer = next;
    }
    out
}

pub fn verify(model: &ModelArgs, max_degree: usize, order: u32, pairs: usize, seed: u64) -> Result<RunReport> {
    let loaded = load(model, &[])?;
    let spec = loaded.spec().clone();
    let m = loaded.alphabet;
    let table = MapCountTable::new(spec.clone());
    let plain = MapCountTable::with_convention(spec.clone(), Convention::Plain);
    let mut report = RunReport::new(loaded.describe(), &["check", "cases", "failures"]);
    report.seed = Some(seed);

    let (mut cases, mut skipped, mut failures) = (0usize, 0usize, Vec::new());
    for w in words_up_to(m, max_degree) {
        for k in MultiIndex::all_up_to(spec.len(), order) {
            let brute = match symmetrized_count_with(Some(&w), &spec, &k, &pruned()) {
                Ok(v) => v,
                Err(OracleError::TooLarge { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let brute0 = BigUint::from(count_planar(
                &StarList::from_multiset(Some(&w), &multiset(&spec, &k)),
                &pruned(),
            )?);
            cases += 1;
            if table.map_count(&w, &k)? != brute || plain.map_count(&w, &k)? != brute0 {
                failures.push(format!("{w} at {k}"));
            }
        }
    }
    report.row([
        "recursion = gluing".to_string(),
        cases.to_string(),
        failures.len().to_string(),
    ]);
    report.check(
        "recursion = gluing",
        failures.is_empty(),
        format!("mismatches {failures:?}"),
    );
    if skipped > 0 {
        report.note(format!("{skipped} cells exceed the oracle size guard and were skipped"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_word = |rng: &mut ChaCha8Rng| {
        let d = rng.random_range(0..=6usize);
        Monomial::new((0..d).map(|_| rng.random_range(0..m as u8)).collect())
    };
    let mut broken = 0;
    for _ in 0..pairs {
        let (p, q) = (random_word(&mut rng), random_word(&mut rng));
        let k = MultiIndex::new((0..spec.len()).map(|_| rng.random_range(0..=1)).collect());
        if table.map_count(&p.concat(&q), &k)? != table.map_count(&q.concat(&p), &k)? {
            broken += 1;
        }
    }
    report.row(["traciality".to_string(), pairs.to_string(), broken.to_string()]);
    report.check(
        "traciality",
        broken == 0,
        format!("{broken} of {pairs} random pairs differ"),
    );

    let bound = TruncationBound::default_for(&spec);
    let entries = table.memo_entries();
    let violations = entries
        .iter()
        .filter(|(w, k, v)| {
            sdmaps::rational::to_rational(v) / sdmaps::rational::to_rational(&k.factorial())
                > bound.entry_bound(k, w.degree())
        })
        .count();
    report.row([
        "growth bound".to_string(),
        entries.len().to_string(),
        violations.to_string(),
    ]);
    report.check(
        "growth bound",
        violations == 0,
        format!("A = {}, B = {}", format_rational(&bound.a), format_rational(&bound.b)),
    );

    let anchors = table.free_energy_series(&ParameterAssignment::zeros(spec.len()), order);
    report.row([
        "free-energy anchors".to_string(),
        "1".to_string(),
        usize::from(anchors.is_err()).to_string(),
    ]);
    report.check(
        "free-energy anchors",
        anchors.is_ok(),
        anchors
            .err()
            .map_or("all derivative identities agree".to_string(), |e| e.to_string()),
    );
    Ok(report)
}
