//! Parses, type checks and evaluates expressions against one event.

use colflow::exprlang::{parse, typecheck, MapContext};

fn main() {
    let event = MapContext::new()
        .with("Jet_pt", vec![85.0, 42.0, 18.5])
        .with("Jet_eta", vec![0.3, -2.9, 1.1])
        .with("nJet", 3i64)
        .with("MET_pt", 61.0);
    let scope = event.scope();
    for src in [
        "sum(Jet_pt)",
        "where(Jet_pt, abs(Jet_eta) < 2.4 && Jet_pt > 30)",
        "len(where(Jet_pt, Jet_eta < 2.4))",
        "nJet >= 2 ? Jet_pt[0] / MET_pt : -1",
        "Jet_pt * 1.05",
        "MET_pt && true",
        "Jet_pt[5]",
        "1 + ",
    ] {
        let expr = match parse(src) {
            Ok(e) => e,
            Err(e) => {
                println!("{src:<50} parse error: {e}");
                continue;
            }
        };
        match typecheck(&expr, &scope) {
            Ok(ty) => match event.eval(&expr) {
                Ok(v) => println!("{src:<50} {ty:<8} {v:?}"),
                Err(e) => println!("{src:<50} {ty:<8} eval error: {e}"),
            },
            Err(e) => println!("{src:<50} type error: {e}"),
        }
        println!("{:<50} printed as {expr}", "");
    }
}
