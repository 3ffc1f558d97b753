//! Property tests for the expression layer: pretty-print round-trips,
//! Euclidean arithmetic identities, and dependency-extraction soundness.

mod common;

use common::{any_expr, int_expr, marking, soundness_case, N};
use proptest::prelude::*;
use sanrep::expr::{evaluate, extract_dependencies, parse, EvalCtx, Expr};

proptest! {
    #[test]
    fn pretty_print_round_trips(e in any_expr()) {
        let printed = e.to_string();
        let reparsed = parse(&printed)
            .unwrap_or_else(|err| panic!("`{printed}` failed to reparse: {err}"));
        prop_assert_eq!(&reparsed, &e, "printed as `{}`", printed);
    }

    #[test]
    fn euclidean_mod_and_div_identities(a in -1000i64..1000, b in 1i64..50) {
        let m = evaluate(
            &Expr::modulo(Expr::int(a), Expr::int(b)),
            &EvalCtx { replica_index: 0, n: 1, env: &sanrep::expr::MapEnv::new(0) },
        ).unwrap().as_int().unwrap();
        let d = evaluate(
            &Expr::binary(sanrep::expr::BinOp::Div, Expr::int(a), Expr::int(b)),
            &EvalCtx { replica_index: 0, n: 1, env: &sanrep::expr::MapEnv::new(0) },
        ).unwrap().as_int().unwrap();
        prop_assert!(0 <= m && m < b);
        prop_assert_eq!(b * d + m, a);
    }

    #[test]
    fn extraction_is_sound(
        e in any_expr(),
        replica in 0i64..N,
        base in marking(),
        noise in marking(),
    ) {
        if let Err(msg) = soundness_case(&e, replica, &base, &noise) {
            prop_assert!(false, "{}", msg);
        }
    }

    #[test]
    fn folded_extraction_is_exact_per_replica(e in int_expr(2), replica in 0i64..N) {
        // Non-dynamic extraction must agree with evaluating the index
        // expressions: every static read it reports stays within bounds
        // or the whole expression errors identically on every marking.
        let deps = extract_dependencies(&e, replica, N);
        if !deps.dynamic {
            // All reported reads are specific references.
            prop_assert!(deps.reads.iter().all(|r| r.index != sanrep::expr::AccessIndex::All));
        }
    }
}
