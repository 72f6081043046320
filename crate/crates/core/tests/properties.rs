//! Properties over randomly generated grammars and inputs.

use proptest::prelude::*;
use xmlboltz::sampler::rng_for_seed;
use xmlboltz::xml::to_xml_string;
use xmlboltz::{
    compile, count_coefficients, enumerate_documents, newton_evaluate, parse_grammar, solve, validate_document,
    DatatypeRegistry, Name, NewtonSettings, OracleTable, Parameter, Sampler, SizeWindow, SolveOptions, XmlEvent,
    XmlWriter,
};

const DEFINES: usize = 3;

fn content(depth: u32) -> BoxedStrategy<String> {
    let leaf = prop_oneof![
        Just("<empty/>".to_string()),
        Just("<text/>".to_string()),
        Just("<data type=\"token\"/>".to_string()),
        Just("<value>v</value>".to_string()),
        (0..DEFINES).prop_map(|i| format!("<ref name=\"d{i}\"/>")),
    ];
    leaf.prop_recursive(depth, 24, 2, |inner| {
        let refs = (0..DEFINES).prop_map(|i| format!("<ref name=\"d{i}\"/>"));
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("<choice>{a}{b}</choice>")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("<group>{a}{b}</group>")),
            inner.clone().prop_map(|a| format!("<optional>{a}</optional>")),
            refs.clone().prop_map(|r| format!("<zeroOrMore>{r}</zeroOrMore>")),
            refs.prop_map(|r| format!("<oneOrMore>{r}</oneOrMore>")),
        ]
    })
    .boxed()
}

fn attributes() -> impl Strategy<Value = String> {
    proptest::collection::vec((any::<bool>(), any::<bool>()), 0..3).prop_map(|attrs| {
        attrs
            .iter()
            .enumerate()
            .map(|(i, &(optional, literal))| {
                let value = if literal { "<choice><value>a</value><value>b</value></choice>" } else { "<text/>" };
                let a = format!("<attribute name=\"a{i}\">{value}</attribute>");
                if optional {
                    format!("<optional>{a}</optional>")
                } else {
                    a
                }
            })
            .collect()
    })
}

/// Grammars with `DEFINES` element definitions that may refer to each
/// other freely; attributes only appear at the top of an element, so they
/// are never repeated.
fn grammar_source() -> impl Strategy<Value = String> {
    proptest::collection::vec((attributes(), content(3)), DEFINES).prop_map(|defs| {
        let mut s =
            String::from("<grammar xmlns=\"http://relaxng.org/ns/structure/1.0\"><start><ref name=\"d0\"/></start>");
        for (i, (attrs, body)) in defs.iter().enumerate() {
            s.push_str(&format!("<define name=\"d{i}\"><element name=\"e{i}\">{attrs}{body}</element></define>"));
        }
        s.push_str("</grammar>");
        s
    })
}

fn oracle_for(system: &xmlboltz::GfSystem) -> Option<OracleTable> {
    let options = SolveOptions::default();
    match solve(system, Parameter::Auto, &options) {
        Ok(o) => Some(o),
        Err(xmlboltz::SolveError::NoFiniteSingularity { .. }) => solve(system, Parameter::Explicit(0.5), &options).ok(),
        Err(_) => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn canonical_form_reparses_to_same_grammar(src in grammar_source()) {
        let g = parse_grammar(src.as_bytes()).unwrap();
        let again = parse_grammar(g.to_rng_xml().as_bytes()).unwrap();
        prop_assert_eq!(&g, &again);
        prop_assert_eq!(again.to_rng_xml(), g.to_rng_xml());
    }

    #[test]
    fn enumeration_matches_counts(src in grammar_source()) {
        let g = parse_grammar(src.as_bytes()).unwrap();
        let Ok(sys) = compile(&g) else { return Ok(()) };
        let table = count_coefficients(&sys, 6);
        for n in 0..=6 {
            let want: u64 = table.get(sys.start(), n).to_string().parse().unwrap();
            if want > 3000 {
                continue;
            }
            let docs = enumerate_documents(&g, n, 3000).unwrap();
            prop_assert_eq!(docs.len() as u64, want);
        }
    }

    #[test]
    fn samples_validate_and_sizes_agree(src in grammar_source(), seed in any::<u64>()) {
        let g = parse_grammar(src.as_bytes()).unwrap();
        let Ok(sys) = compile(&g) else { return Ok(()) };
        let Some(oracle) = oracle_for(&sys) else { return Ok(()) };
        let s = Sampler::new(&g, &oracle, xmlboltz::default_datatype_samplers()).unwrap();
        let mut rng = rng_for_seed(seed);
        for _ in 0..20 {
            let Ok((events, size)) = s.free_sample_events(&mut rng, 300) else { continue };
            let counted: u64 = events
                .iter()
                .map(|e| match e {
                    XmlEvent::StartElement { attributes, .. } => 1 + attributes.len() as u64,
                    _ => 0,
                })
                .sum();
            prop_assert_eq!(counted, size);
            let xml = to_xml_string(&events).unwrap();
            prop_assert_eq!(validate_document(&g, &xml), Ok(size));
        }
    }

    #[test]
    fn same_seed_same_bytes(src in grammar_source(), seed in any::<u64>()) {
        let g = parse_grammar(src.as_bytes()).unwrap();
        let Ok(sys) = compile(&g) else { return Ok(()) };
        let Some(oracle) = oracle_for(&sys) else { return Ok(()) };
        let s = Sampler::new(&g, &oracle, xmlboltz::default_datatype_samplers()).unwrap();
        let window = SizeWindow::new(10, 0.5).unwrap();
        let run = || {
            let mut w = XmlWriter::new(Vec::new());
            let r = s.sample_in_window(&mut rng_for_seed(seed), &window, 200, &mut w).map(|st| st.size);
            (r.ok(), w.finish().ok())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn values_increase_with_x(src in grammar_source(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let g = parse_grammar(src.as_bytes()).unwrap();
        let Ok(sys) = compile(&g) else { return Ok(()) };
        let Some(oracle) = oracle_for(&sys) else { return Ok(()) };
        let top = oracle.bracket.map_or(1.0, |br| br.lo);
        let (lo, hi) = if a < b { (a * top, b * top) } else { (b * top, a * top) };
        let settings = NewtonSettings::default();
        let vl = newton_evaluate(&sys, lo, &settings).unwrap().values;
        let vh = newton_evaluate(&sys, hi, &settings).unwrap().values;
        for (l, h) in vl.iter().zip(&vh) {
            prop_assert!(l <= h, "{l} > {h}");
        }
    }

    #[test]
    fn oracle_text_roundtrip(src in grammar_source()) {
        let g = parse_grammar(src.as_bytes()).unwrap();
        let Ok(sys) = compile(&g) else { return Ok(()) };
        let Some(oracle) = oracle_for(&sys) else { return Ok(()) };
        prop_assert_eq!(OracleTable::parse_text(&oracle.to_text(), &sys).unwrap(), oracle);
        let reread = xmlboltz::GfSystem::parse_text(&sys.to_text()).unwrap();
        prop_assert_eq!(reread.to_text(), sys.to_text());
    }

    #[test]
    fn window_contains_target(target in 1u64..1_000_000, tol in 0.0..1.0f64) {
        let w = SizeWindow::new(target, tol).unwrap();
        prop_assert!(w.lower() <= target && target <= w.upper());
        prop_assert!(w.contains(target));
        prop_assert!(w.lower() >= 1);
    }

    #[test]
    fn escaped_text_and_attributes_parse_back(text in "\\PC*", value in "[ -~\t\n]*") {
        let name = std::sync::Arc::new(Name::new("e"));
        let events = vec![
            XmlEvent::StartElement { name: name.clone(), attributes: vec![(std::sync::Arc::new(Name::new("v")), value.clone())] },
            XmlEvent::Text(text.clone()),
            XmlEvent::EndElement { name },
        ];
        let xml = to_xml_string(&events).unwrap();
        let doc = roxmltree::Document::parse(&xml).unwrap();
        let root = doc.root_element();
        prop_assert_eq!(root.attribute("v"), Some(value.as_str()));
        prop_assert_eq!(root.text().unwrap_or(""), text.as_str());
    }
}

#[test]
fn canonical_registry_outputs_match_enumeration() {
    // A sampled document rendered with the canonical registry is one of the
    // enumerated documents of its size.
    let src = xmlboltz::bundled::ATTRIBUTES;
    let g = parse_grammar(src.as_bytes()).unwrap();
    let sys = compile(&g).unwrap();
    let oracle = solve(&sys, Parameter::Auto, &SolveOptions::default()).unwrap();
    let s = Sampler::new(&g, &oracle, DatatypeRegistry::canonical()).unwrap();
    let docs = enumerate_documents(&g, 7, 100_000).unwrap();
    let window = SizeWindow::exact(7).unwrap();
    let mut rng = rng_for_seed(3);
    for _ in 0..200 {
        let mut events = Vec::new();
        s.sample_in_window(&mut rng, &window, 100_000, &mut events).unwrap();
        assert!(docs.contains(&to_xml_string(&events).unwrap()));
    }
}
