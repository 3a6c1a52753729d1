//! Writes a small columnar file, reads two of its columns back locally and
//! through the data server, and prints what each read cost.

use colflow::colstore::{open, serve, write_dataset, ColumnData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("events.col");
    let n = 10_000;
    let columns = vec![
        ("event_weight".to_string(), ColumnData::F64(vec![1.0; n])),
        ("MET_pt".to_string(), ColumnData::F64((0..n).map(|i| (i % 200) as f64).collect())),
        ("nJet".to_string(), ColumnData::I64((0..n).map(|i| (i % 5) as i64).collect())),
        (
            "Jet_pt".to_string(),
            ColumnData::vec_f64((0..n).map(|i| vec![30.0 + (i % 7) as f64; i % 5])),
        ),
    ];
    let clusters = write_dataset(&path, &columns, 2_500)?;
    println!("wrote {} clusters to {}", clusters.len(), path.display());

    let mut local = open(&path.to_string_lossy())?;
    let h = local.handle().clone();
    println!("schema: {:?}", h.schema.iter().map(|c| (&c.name, c.dtype)).collect::<Vec<_>>());
    let mut met_sum = 0.0;
    for batch in local.read_range(&["MET_pt", "nJet"], 1_000, 6_000)? {
        if let Some(ColumnData::F64(v)) = batch?.column("MET_pt") {
            met_sum += v.iter().sum::<f64>();
        }
    }
    let acct = local.account();
    println!(
        "local read of entries 1000..6000: MET sum {met_sum}, {} bytes in {} calls ({} chunk bytes)",
        acct.bytes_read, acct.read_calls, acct.chunk_bytes
    );
    println!("footer size of the same columns over the whole file: {}", h.chunk_bytes(&["MET_pt", "nJet"])?);

    let mut server = serve(dir.path(), "127.0.0.1:0")?;
    let uri = server.uri_for("events.col");
    let mut remote = open(&uri)?;
    let batch = remote.read_all(&["Jet_pt"])?;
    println!("remote {uri}: {} entries of Jet_pt", batch.entry_count);
    println!(
        "client counted {} bytes, server sent {}",
        remote.account().bytes_read,
        server.stats().bytes_served()
    );
    server.shutdown();
    Ok(())
}
