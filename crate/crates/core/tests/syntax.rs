use proptest::prelude::*;
use semforge::syntax::{Statement, Term};
use semforge::{parse, Dataset, Error, Model};

fn spaced(text: &str, pad: &str) -> String {
    let mut out = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '=' | '~' if chars.peek() == Some(&'~') => {
                out.push_str(pad);
                out.push(c);
                out.push(chars.next().unwrap());
                out.push_str(pad);
            }
            '~' | '+' | '*' => {
                out.push_str(pad);
                out.push(c);
                out.push_str(pad);
            }
            _ => out.push(c),
        }
    }
    out
}

const MODELS: [&str; 3] = [
    "eta3 ~ x1 + x2\neta1 =~ 2*y1 + y2 + y3\ny5 ~~ y6",
    "x1 ~ -0.5*x2 + x3\nf =~ y1 + 1.5e-2*y2",
    "a ~~ b + c\nd ~ a",
];

#[test]
fn whitespace_around_operators_is_irrelevant() {
    for m in MODELS {
        let base = parse(m).unwrap();
        for pad in ["", " ", "\t", "   "] {
            assert_eq!(parse(&spaced(m, pad)).unwrap(), base, "pad {pad:?}");
        }
        let compact: String = m.split('\n').map(|l| l.replace(' ', "")).collect::<Vec<_>>().join("\n");
        assert_eq!(parse(&compact).unwrap(), base);
    }
}

#[test]
fn parsing_is_pure() {
    for m in MODELS {
        assert_eq!(parse(m).unwrap(), parse(m).unwrap());
    }
}

#[test]
fn ordinal_types_are_rejected_when_loading() {
    let desc = parse("eta =~ y1 + y2 + y3\ny1, y2 is ordinal").unwrap();
    assert!(matches!(desc.statements[1], Statement::TypeDecl { .. }));
    let csv = ",y1,y2,y3\n0,1,2,3\n1,2,1,0\n2,0,1,1\n3,4,3,5\n";
    let data = Dataset::from_csv_reader(csv.as_bytes()).unwrap();
    match Model::new(desc, &data) {
        Err(Error::Unsupported(msg)) => assert!(msg.contains("ordinal"), "{msg}"),
        other => panic!("expected unsupported, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn fixed_values_survive_display(v in -1e6..1e6f64, name in "[a-z][a-z0-9]{0,4}") {
        prop_assume!(name != "is");
        let text = format!("{} ~ {}", "target", Term::fixed(name.clone(), v));
        let d = parse(&text).unwrap();
        let Statement::Regression { rhs, .. } = &d.statements[0] else { panic!() };
        prop_assert_eq!(rhs[0].fixed, Some(v));
        prop_assert_eq!(&rhs[0].name, &name);
    }

    #[test]
    fn garbage_never_panics(text in "[ -~\n]{0,60}") {
        let _ = parse(&text);
    }
}
