//! Write and read ELFT tensor files, single and concatenated.

use eloss::io::elft::{decode, encode};
use eloss::io::{elft_read, elft_read_all, elft_write, elft_write_all};
use eloss::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("eloss-elft-example");
    std::fs::create_dir_all(&dir)?;

    let t = Tensor::new(&[2, 3], vec![0.5, -1.25, 3.0, 0.125, 7.0, -0.0])?;
    let bytes = encode(&t)?;
    let hex: Vec<String> = bytes.iter().take(26).map(|b| format!("{b:02x}")).collect();
    println!("{} bytes, header {}", bytes.len(), hex.join(" "));
    println!("decoded shape {:?}", decode(&bytes)?.shape());

    let one = dir.join("one.elft");
    elft_write(&t, &one)?;
    println!("round trip equal: {}", elft_read(&one)? == t);

    let many = dir.join("many.elft");
    let parts = [t.clone(), Tensor::scalar(2.5), Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0])?];
    elft_write_all(parts.iter(), &many)?;
    for (i, p) in elft_read_all(&many)?.iter().enumerate() {
        println!("record {i}: shape {:?} data {:?}", p.shape(), p.data());
    }

    // 0.1 is not an f32; files store the nearest one.
    let lossy = Tensor::new(&[1], vec![0.1])?;
    println!("0.1 stored as {:.10}", decode(&encode(&lossy)?)?.data()[0]);
    Ok(())
}
