use neckcut::harness::{
    diff_run, random_delayed_inputs, reduction_report, SizeStats, StdinProfile, Verdict, MAX_LINE_LEN, MAX_TEXT_LINES,
};
use neckcut::interp::Invocation;
use neckcut::ir::parse_program;
use proptest::prelude::*;

fn echo(prefix: &str) -> String {
    format!(
        "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {{
entry:
  %buf = alloca arr<byte, 8>
  br loop
loop:
  %n = call @read_line, %buf, 8
  %got = ne %n, 0
  cbr %got, body, done
body:
  call @print_str, \"{prefix}\"
  call @print_str, %buf
  br loop
done:
  ret 0
}}
"
    )
}

fn size() -> impl Strategy<Value = SizeStats> {
    (0usize..500, 0usize..20, 0usize..80, 0usize..10).prop_map(|(i, f, b, g)| SizeStats {
        ir_insts: i,
        funcs: f,
        basic_blocks: b,
        globals: g,
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn text_inputs_respect_their_bounds(seed in any::<u64>(), n in 0usize..20) {
        let inputs = random_delayed_inputs(seed, n, StdinProfile::Text);
        prop_assert_eq!(inputs.len(), n);
        prop_assert_eq!(&inputs, &random_delayed_inputs(seed, n, StdinProfile::Text));
        for e in &inputs {
            prop_assert!(e.extra_args.is_empty());
            prop_assert!(e.stdin.iter().all(|b| matches!(b, b'\t' | b'\n' | 0x20..=0x7e)));
            let lines: Vec<&[u8]> = e.stdin.split(|b| *b == b'\n').collect();
            prop_assert!(lines.len() <= MAX_TEXT_LINES + 1);
            prop_assert!(lines.iter().all(|l| l.len() <= MAX_LINE_LEN));
        }
    }

    #[test]
    fn byte_inputs_are_bounded(seed in any::<u64>()) {
        for e in random_delayed_inputs(seed, 4, StdinProfile::Bytes) {
            prop_assert!(e.stdin.len() <= 512);
        }
    }

    #[test]
    fn reductions_follow_the_percentage_formula(a in size(), b in size()) {
        let r = reduction_report(&a, &b);
        for (got, before, after) in [
            (r.ir_insts, a.ir_insts, b.ir_insts),
            (r.funcs, a.funcs, b.funcs),
            (r.basic_blocks, a.basic_blocks, b.basic_blocks),
            (r.globals, a.globals, b.globals),
        ] {
            match got {
                None => prop_assert_eq!(before, 0),
                Some(pct) => {
                    prop_assert!(before > 0);
                    let back = before as f64 * (1.0 - pct / 100.0);
                    prop_assert!((back - after as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn diff_is_symmetric(seed in 0u64..500, same in any::<bool>()) {
        let a = parse_program(&echo("> ")).unwrap();
        let b = parse_program(&echo(if same { "> " } else { "# " })).unwrap();
        let inputs = random_delayed_inputs(seed, 6, StdinProfile::Text);
        let ab = diff_run(&a, &b, &Invocation::supplied(&[]), &inputs);
        let ba = diff_run(&b, &a, &Invocation::supplied(&[]), &inputs);
        prop_assert_eq!(ab.verdict, ba.verdict);
        prop_assert_eq!(ab.trials, 6);
        let trials = |r: &neckcut::harness::DiffReport| r.mismatches.iter().map(|m| m.trial).collect::<Vec<_>>();
        prop_assert_eq!(trials(&ab), trials(&ba));
        // A prefix difference is visible exactly when some line was read.
        let expected: Vec<usize> = if same {
            Vec::new()
        } else {
            inputs.iter().enumerate().filter(|(_, e)| !e.stdin.is_empty()).map(|(i, _)| i).collect()
        };
        prop_assert_eq!(trials(&ab), expected);
        prop_assert_eq!(ab.verdict == Verdict::Pass, trials(&ab).is_empty());
    }
}
