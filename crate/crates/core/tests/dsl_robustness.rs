use objective_lab::objective_dsl::{check_program, parse_program, Objective};
use proptest::prelude::*;

const TOKENS: &[&str] = &[
    "pcl", "prl", "rcl", "rrl", "beta", "x", "let", "=", "(", ")", ",", "+", "-", "*", "/", "\n",
    "0.5", "1e-3", "2", "exp", "log", "sigmoid", "logsigmoid", "relu", "abs", "pow", "mean", "var",
    "std", "concat", "where", "min", "max", "clamp_min", "indicator_lt", "#", " ",
];

fn token_soup() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(TOKENS), 0..40).prop_map(|t| t.join(" "))
}

fn leaf() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["pcl", "prl", "rcl", "rrl", "beta", "0.5", "2.0"]).prop_map(str::to_owned)
}

fn expr() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a} {op} {b})")),
            (prop::sample::select(vec!["exp", "sigmoid", "logsigmoid", "relu", "abs", "-"]), inner.clone())
                .prop_map(|(f, a)| if f == "-" { format!("-({a})") } else { format!("{f}({a})") }),
            (inner.clone(), inner).prop_map(|(a, b)| format!("max({a}, {b})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn arbitrary_text_never_panics(s in ".{0,200}") {
        if let Ok(p) = parse_program(&s) {
            let _ = check_program(&p);
        }
    }

    #[test]
    fn token_soup_never_panics(s in token_soup()) {
        if let Ok(p) = parse_program(&s) {
            let _ = check_program(&p);
        }
    }

    #[test]
    fn render_is_a_parse_fixpoint(e in expr()) {
        let src = format!("let t = {e}\nt * pcl");
        let p = parse_program(&src).unwrap();
        let once = p.render();
        let again = parse_program(&once).unwrap().render();
        prop_assert_eq!(once, again);
    }

    #[test]
    fn diagnostics_carry_positions(s in token_soup()) {
        if let Err(d) = parse_program(&s) {
            prop_assert!(d.line >= 1 && d.column >= 1);
            prop_assert!(!d.message.is_empty());
        }
    }
}

#[test]
fn deep_nesting_is_rejected_not_overflowed() {
    let src = format!("{}pcl{}", "(".repeat(100_000), ")".repeat(100_000));
    assert!(parse_program(&src).is_err());
    let src = format!("{}pcl", "-".repeat(100_000));
    assert!(parse_program(&src).is_err());
}

#[test]
fn objective_from_source_checks_shape() {
    assert!(Objective::from_source("ok", "relu(1 - beta * (pcl - prl))").is_ok());
    let e = Objective::from_source("bad", "mean(pcl)").unwrap_err();
    assert!(e.to_string().contains("per input"));
}
