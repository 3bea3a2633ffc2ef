//! Write a seeded matrix in the FTMM binary format and read it back.
use ftimm::matrix::{Matrix, MatrixGenerator, FORMAT_VERSION, MAGIC};

fn main() -> ftimm::Result<()> {
    let dir = std::env::temp_dir().join("ftimm-matrix-io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("a.ftmm");

    let a = MatrixGenerator::new(7).matrix(5, 3);
    a.save(&path)?;
    let raw = std::fs::read(&path)?;
    println!("{} bytes, magic {:?}, version {FORMAT_VERSION}", raw.len(), std::str::from_utf8(&raw[..4]).unwrap_or("?"));
    assert_eq!(&raw[..4], MAGIC);

    let back = Matrix::load(&path)?;
    println!("round trip exact: {}, checksum {:.6}", back.bit_eq(&a), back.checksum());
    for r in 0..back.rows() {
        println!("{:?}", back.row(r));
    }
    Ok(())
}
