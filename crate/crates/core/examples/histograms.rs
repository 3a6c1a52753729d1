//! Fills a histogram in two halves, merges them and compares with a single
//! fill over the whole stream.

use colflow::hist::Histo1D;

fn main() -> Result<(), colflow::hist::HistError> {
    let xs: Vec<(f64, f64)> = (0..1000).map(|i| ((i * 37 % 130) as f64 - 10.0, 0.5 + (i % 3) as f64 * 0.25)).collect();
    let mut whole = Histo1D::new("h_met", 12, 0.0, 120.0)?;
    let mut first = whole.empty_like();
    let mut second = whole.empty_like();
    for (i, &(x, w)) in xs.iter().enumerate() {
        whole.fill(x, w)?;
        if i < 400 { first.fill(x, w)? } else { second.fill(x, w)? }
    }
    first.merge(&second)?;
    println!("bin     sumw(whole)  sumw(merged)");
    for (i, (a, b)) in whole.sumw().iter().zip(first.sumw()).enumerate() {
        let label = match i {
            0 => "under".to_string(),
            i if i == whole.nbins() as usize + 1 => "over".to_string(),
            i => format!("{:>5}", i - 1),
        };
        println!("{label:>5}  {a:>11}  {b:>12}");
    }
    println!("entries {} / {}, total weight {}", whole.entries(), first.entries(), whole.total_weight());
    assert_eq!(whole, first);
    Ok(())
}
