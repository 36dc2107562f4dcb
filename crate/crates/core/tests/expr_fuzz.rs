mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivatives_match_finite_differences(text in common::expr_strategy(), x in -1.5f64..1.5, y in -1.5f64..1.5) {
        common::check_expression(&text, x, y)?;
    }
}

#[test]
fn rejects_malformed_input() {
    use chaintrick::expr::{parse, ExprError};
    for bad in ["", "(x", "x +", "2 ** x", "sin x", "x y", "1.e"] {
        assert!(matches!(parse(bad, &["x"]), Err(ExprError::Syntax { .. })), "{bad}");
    }
    assert!(matches!(parse("z + 1", &["x"]), Err(ExprError::UnknownIdentifier { .. })));
}
