//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::Command;
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use xmlboltz::newton::newton_evaluate;
use xmlboltz::sampler::rng_for_seed;
use xmlboltz::xml::to_xml_string;
use xmlboltz::{
    bundled, compile, count_coefficients, enumerate_documents, estimate_singularity, parse_grammar, solve,
    validate_document, DatatypeRegistry, EventSink, GfSystem, Grammar, NewtonSettings, OracleTable, Parameter, Sampler,
    SerializeError, SizeWindow, SolveOptions, XmlEvent, XmlWriter,
};

const EXE: &str = env!("CARGO_BIN_EXE_xmlboltz");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn grammar(src: &str) -> Grammar {
    parse_grammar(src.as_bytes()).unwrap()
}

fn auto(g: &Grammar) -> (GfSystem, OracleTable) {
    let sys = compile(g).unwrap();
    let oracle = solve(&sys, Parameter::Auto, &SolveOptions::default()).unwrap();
    (sys, oracle)
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(EXE).args(args).output().expect("run xmlboltz");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn report_value(stdout: &str, key: &str) -> Option<f64> {
    stdout.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix(' ')?.parse().ok())
}

fn singularity(dir: &Path) -> Outcome {
    let rng = dir.join("ternary.rng");
    std::fs::write(&rng, bundled::TERNARY).unwrap();
    let sys = dir.join("ternary.sys");
    let (code, _) = run_cli(&["compile", rng.to_str().unwrap(), "-o", sys.to_str().unwrap()]);
    if code != 0 {
        return outcome(false, format!("compile exited with {code}"));
    }
    let oracle = dir.join("ternary.oracle");
    let started = Instant::now();
    let (code, out) = run_cli(&["solve", sys.to_str().unwrap(), "--x", "AUTO", "-o", oracle.to_str().unwrap()]);
    let wall = started.elapsed();
    let (Some(lo), Some(hi), Some(rho)) =
        (report_value(&out, "rho-lo"), report_value(&out, "rho-hi"), report_value(&out, "rho"))
    else {
        return outcome(false, format!("solve exited with {code} and printed no bracket"));
    };
    let tau = 2f64.powf(-1.0 / 3.0);
    let analytic = tau / (1.0 + tau.powi(3));
    let pass = code == 0
        && (0.5286..=0.5296).contains(&rho)
        && (0.5286..=0.5296).contains(&lo)
        && hi - lo <= 1e-4
        && lo <= analytic
        && analytic <= hi
        && wall < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "rho = {rho} in [0.5286, 0.5296], bracket [{lo:.10}, {hi:.10}] width {:.1e} contains analytic {analytic:.10}, solve took {:.1} ms",
            hi - lo,
            wall.as_secs_f64() * 1e3
        ),
    )
}

fn coefficients() -> Outcome {
    let sys = compile(&grammar(bundled::TERNARY)).unwrap();
    let table = count_coefficients(&sys, 40);
    let t: Vec<String> = (0..=13).map(|n| table.get(sys.start(), n).to_string()).collect();
    let want = ["0", "1", "0", "0", "1", "0", "0", "3", "0", "0", "12", "0", "0", "55"];
    let counts_ok = t == want;
    let series: f64 =
        (0..=40).map(|n| table.get(sys.start(), n).to_string().parse::<f64>().unwrap() * 0.4f64.powi(n as i32)).sum();
    let newton = newton_evaluate(&sys, 0.4, &NewtonSettings::default()).unwrap().values[sys.start().index()];
    let diff = (newton - series).abs();
    outcome(
        counts_ok && diff < 1e-6,
        format!("t_0..t_13 = [{}], |newton(0.4) - series_40(0.4)| = {diff:.2e} < 1e-6", t.join(", ")),
    )
}

fn uniformity() -> Outcome {
    let started = Instant::now();
    let g = grammar(bundled::BINARY);
    let (_, oracle) = auto(&g);
    let docs = enumerate_documents(&g, 9, 1000).unwrap();
    let index: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    if docs.len() != 14 || index.len() != 14 {
        return outcome(false, format!("expected 14 distinct documents of size 9, enumerated {}", index.len()));
    }
    let sampler = Sampler::new(&g, &oracle, DatatypeRegistry::canonical()).unwrap();
    let window = SizeWindow::exact(9).unwrap();
    let samples = 100_000u64;
    let mut counts = vec![0u64; 14];
    let mut rng = rng_for_seed(2024);
    let mut events = Vec::new();
    for _ in 0..samples {
        events.clear();
        sampler.sample_in_window(&mut rng, &window, 100_000, &mut events).unwrap();
        let xml = to_xml_string(&events).unwrap();
        counts[index[xml.as_str()]] += 1;
    }
    let expected = samples as f64 / 14.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(13.0).unwrap().cdf(chi2);
    let wall = started.elapsed();
    outcome(
        p >= 0.001 && wall < Duration::from_secs(120),
        format!(
            "{samples} samples over 14 forms, chi2 = {chi2:.2} (13 df), p = {p:.4} >= 0.001, {:.1} s",
            wall.as_secs_f64()
        ),
    )
}

fn linearity() -> Outcome {
    let g = grammar(bundled::TERNARY);
    let (sys, oracle) = auto(&g);
    let sampler = Sampler::new(&g, &oracle, DatatypeRegistry::canonical()).unwrap();
    let points = [(1_000u64, 2_000u64), (10_000, 500), (100_000, 100)];
    let mut means = Vec::new();
    for (i, &(n, docs)) in points.iter().enumerate() {
        let window = SizeWindow::new(n, 0.2).unwrap();
        let mut rng = rng_for_seed(7 + i as u64);
        let started = Instant::now();
        for _ in 0..docs {
            let mut w = XmlWriter::new(io::sink());
            sampler.sample_in_window(&mut rng, &window, 1_000_000, &mut w).unwrap();
        }
        means.push(started.elapsed().as_secs_f64() / docs as f64);
    }
    let ratios = [means[1] / means[0], means[2] / means[1]];
    let linear = ratios.iter().all(|r| (8.0..=13.0).contains(r));

    // Free-sampler size spread just below the singularity.
    let rho_lo = oracle.bracket.unwrap().lo;
    let near = solve(&sys, Parameter::Explicit(rho_lo * (1.0 - 1e-4)), &SolveOptions::default()).unwrap();
    let free = Sampler::new(&g, &near, DatatypeRegistry::canonical()).unwrap();
    let mut rng = rng_for_seed(99);
    let mut decades = BTreeMap::new();
    let (mut min, mut max) = (u64::MAX, 0);
    for _ in 0..100_000 {
        let size = free.free_size(&mut rng, u64::MAX).unwrap();
        min = min.min(size);
        max = max.max(size);
        *decades.entry(size.ilog10()).or_insert(0u64) += 1;
    }
    let spread = (max as f64 / min as f64).log10();
    let histogram: Vec<String> = decades.iter().map(|(d, c)| format!("1e{d}:{c}")).collect();
    outcome(
        linear && spread >= 3.0,
        format!(
            "mean ms/doc {:.3} / {:.3} / {:.3} at n = 1e3/1e4/1e5, ratios {:.2} and {:.2} in [8, 13]; free sizes span {spread:.2} decades [{}]",
            means[0] * 1e3,
            means[1] * 1e3,
            means[2] * 1e3,
            ratios[0],
            ratios[1],
            histogram.join(" ")
        ),
    )
}

fn validity() -> Outcome {
    let targets = [
        ("ternary", 100, 0.2),
        ("binary", 100, 0.2),
        ("single", 1, 0.0),
        ("attributes", 50, 0.2),
        ("lists", 50, 0.2),
        ("rss", 50, 0.2),
    ];
    let mut failures = Vec::new();
    let mut total = 0u64;
    for ((name, src), (tname, n, eps)) in bundled::ALL.iter().zip(targets) {
        assert_eq!(*name, tname);
        let g = grammar(src);
        let (_, oracle) = auto_or_explicit(&g);
        let sampler = Sampler::new(&g, &oracle, xmlboltz::default_datatype_samplers()).unwrap();
        let window = SizeWindow::new(n, eps).unwrap();
        let mut bad = 0;
        for i in 0..10_000u64 {
            let mut rng = rng_for_seed(i);
            let mut w = XmlWriter::new(Vec::new());
            let stats = sampler.sample_in_window(&mut rng, &window, 1_000_000, &mut w).unwrap();
            let xml = String::from_utf8(w.finish().unwrap()).unwrap();
            match validate_document(&g, &xml) {
                Ok(size) if size == stats.size => {}
                _ => bad += 1,
            }
            total += 1;
        }
        if bad > 0 {
            failures.push(format!("{name}: {bad}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{total} documents across {} grammars parsed and re-validated, sizes agree; failures: [{}]",
            targets.len(),
            failures.join(", ")
        ),
    )
}

/// Grammars without recursion have no singularity; any x works for them.
fn auto_or_explicit(g: &Grammar) -> (GfSystem, OracleTable) {
    let sys = compile(g).unwrap();
    let oracle = match solve(&sys, Parameter::Auto, &SolveOptions::default()) {
        Ok(o) => o,
        Err(_) => solve(&sys, Parameter::Explicit(0.5), &SolveOptions::default()).unwrap(),
    };
    (sys, oracle)
}

fn newton_properties() -> Outcome {
    let mut worst_fd = 0.0f64;
    let mut max_iterations = 0;
    let mut monotone = true;
    let mut rng = rng_for_seed(5);
    let options = SolveOptions::default();
    for (_, src) in bundled::ALL {
        let sys = compile(&grammar(src)).unwrap();
        let m = sys.len();
        let rho = estimate_singularity(&sys, &options).map(|b| b.lo).unwrap_or(1.0);
        for _ in 0..100 {
            let x = rng.random_range(0.0..rho);
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            let j = sys.jacobian(x, &y);
            for col in 0..m {
                let h = 1e-5 * y[col].abs().max(1e-2);
                let (mut up, mut down) = (y.clone(), y.clone());
                up[col] += h;
                down[col] -= h;
                let (fu, fd) = (sys.evaluate(x, &up), sys.evaluate(x, &down));
                for row in 0..m {
                    let numeric = (fu[row] - fd[row]) / (2.0 * h);
                    let exact = j[row * m + col];
                    let err = (numeric - exact).abs() / exact.abs().max(1.0);
                    worst_fd = worst_fd.max(err);
                }
            }
        }
        let sol = newton_evaluate(&sys, 0.9 * rho, &options.newton).unwrap();
        max_iterations = max_iterations.max(sol.iterations);
        let mut prev = vec![0.0; m];
        for k in 0..10 {
            let x = rho * k as f64 / 9.0;
            let v = newton_evaluate(&sys, x, &options.newton).unwrap().values;
            monotone &= v.iter().zip(&prev).all(|(a, b)| a >= b);
            prev = v;
        }
    }
    outcome(
        worst_fd < 1e-6 && max_iterations <= 50 && monotone,
        format!(
            "worst finite-difference error {worst_fd:.1e} < 1e-6 over 100 points per system, max iterations at 0.9 rho = {max_iterations} <= 50, monotone on 10-point grid: {monotone}"
        ),
    )
}

/// Counts bytes reaching the final sink.
struct Probe(Rc<Cell<u64>>);

impl Write for Probe {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.set(self.0.get() + buf.len() as u64);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct Tracker {
    writer: XmlWriter<BufWriter<Probe>>,
    delivered: Rc<Cell<u64>>,
    events: u64,
    first_byte_at: Option<u64>,
    max_retained: usize,
}

impl EventSink for Tracker {
    fn event(&mut self, event: XmlEvent) -> Result<(), SerializeError> {
        self.writer.event(event)?;
        self.events += 1;
        if self.first_byte_at.is_none() && self.delivered.get() > 0 {
            self.first_byte_at = Some(self.events);
        }
        self.max_retained = self.max_retained.max(self.writer.retained_bytes());
        Ok(())
    }
}

fn streaming() -> Outcome {
    let g = grammar(bundled::TERNARY);
    let (_, oracle) = auto(&g);
    let sampler = Sampler::new(&g, &oracle, DatatypeRegistry::canonical()).unwrap();
    let run = |n: u64| {
        let delivered = Rc::new(Cell::new(0));
        let mut t = Tracker {
            writer: XmlWriter::new(BufWriter::new(Probe(delivered.clone()))),
            delivered: delivered.clone(),
            events: 0,
            first_byte_at: None,
            max_retained: 0,
        };
        let mut rng = rng_for_seed(n);
        let stats = sampler.sample_in_window(&mut rng, &SizeWindow::new(n, 0.1).unwrap(), 1_000_000, &mut t).unwrap();
        let capacity = t.writer.get_ref().capacity();
        t.writer.finish().unwrap();
        (stats.size, t.events, t.first_byte_at, t.max_retained + capacity, delivered.get())
    };
    let (small_size, _, _, small_mem, _) = run(1_000);
    let (size, events, first, mem, bytes) = run(1_000_000);
    let fraction = first.map_or(1.0, |f| f as f64 / events as f64);
    outcome(
        size >= 900_000 && mem == small_mem && fraction < 0.01,
        format!(
            "size {size} ({bytes} bytes): serializer memory {mem} B, same as {small_mem} B for size {small_size}; first byte flushed after {:.3}% of events",
            fraction * 100.0
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let rng = dir.join("g.rng");
    std::fs::write(&rng, bundled::RSS).unwrap();
    let sys = dir.join("g.sys");
    let oracle = dir.join("g.oracle");
    let mut outputs = Vec::new();
    for round in 0..2 {
        let out = dir.join(format!("run{round}"));
        let steps: [Vec<&str>; 3] = [
            vec!["compile", rng.to_str().unwrap(), "-o", sys.to_str().unwrap()],
            vec!["solve", sys.to_str().unwrap(), "-o", oracle.to_str().unwrap()],
            vec![
                "sample",
                rng.to_str().unwrap(),
                oracle.to_str().unwrap(),
                "-n",
                "100",
                "-e",
                "0.2",
                "--count",
                "10",
                "--seed",
                "7",
                "--out-dir",
                out.to_str().unwrap(),
            ],
        ];
        for step in &steps {
            let (code, _) = run_cli(step);
            if code != 0 {
                return outcome(false, format!("`{}` exited with {code}", step.join(" ")));
            }
        }
        let mut files = BTreeMap::new();
        for i in 0..10 {
            files.insert(i, std::fs::read(out.join(format!("doc-{i}.xml"))).unwrap());
        }
        files.insert(100, std::fs::read(&sys).unwrap());
        files.insert(101, std::fs::read(&oracle).unwrap());
        outputs.push(files);
    }
    let (_, stdout_a) =
        run_cli(&["sample", rng.to_str().unwrap(), oracle.to_str().unwrap(), "-n", "100", "--seed", "7"]);
    let (_, stdout_b) =
        run_cli(&["sample", rng.to_str().unwrap(), oracle.to_str().unwrap(), "-n", "100", "--seed", "7"]);
    let same = outputs[0] == outputs[1] && stdout_a == stdout_b && !stdout_a.is_empty();
    outcome(same, "two runs of compile, solve and sample (n=100, e=0.2, count=10, seed=7) and of stdout sampling are byte-identical")
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: [(&str, Box<dyn Fn() -> Outcome>); 8] = [
        ("singularity", Box::new(|| singularity(dir.path()))),
        ("coefficients", Box::new(coefficients)),
        ("uniformity", Box::new(uniformity)),
        ("linearity", Box::new(linearity)),
        ("validity", Box::new(validity)),
        ("newton", Box::new(newton_properties)),
        ("streaming", Box::new(streaming)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("criterion {} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
