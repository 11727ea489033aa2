use std::io::Write;

use ndarray::{Array1, Array2, Axis};

use super::AnalysisError;
use crate::hisco::OccupationRecord;
use crate::nn::{embed, Checkpoint};

const POWER_ITERS: usize = 10_000;

fn power_vector(c: &Array2<f64>, against: Option<&Array1<f64>>) -> Array1<f64> {
    let d = c.nrows();
    // Fixed, non-symmetric start so no principal direction is orthogonal to it by construction.
    let mut v = Array1::from_shape_fn(d, |i| 1.0 + 0.37 * i as f64 + 0.011 * (i * i) as f64);
    let project = |v: &mut Array1<f64>| {
        if let Some(u) = against {
            let dot = v.dot(u);
            v.scaled_add(-dot, u);
        }
    };
    project(&mut v);
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return Array1::zeros(d);
    }
    v /= norm;
    for _ in 0..POWER_ITERS {
        let mut w = c.dot(&v);
        project(&mut w);
        let n = w.dot(&w).sqrt();
        if n == 0.0 {
            break;
        }
        w /= n;
        let delta = (&w - &v).mapv(f64::abs).sum();
        v = w;
        if delta < 1e-13 {
            break;
        }
    }
    // Sign convention: largest-magnitude entry positive.
    let (_, pivot) = v.iter().fold((0.0f64, 0.0f64), |(m, s), &x| if x.abs() > m { (x.abs(), x) } else { (m, s) });
    if pivot < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    v
}

/// Projection of centered rows onto the top two principal directions.
pub fn pca_2d(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    if n == 0 {
        return Array2::zeros((0, 2));
    }
    let mean = x.mean_axis(Axis(0)).unwrap();
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let v1 = power_vector(&cov, None);
    let v2 = power_vector(&cov, Some(&v1));
    let mut out = Array2::zeros((n, 2));
    out.column_mut(0).assign(&centered.dot(&v1));
    out.column_mut(1).assign(&centered.dot(&v2));
    out
}

/// Writes `id,sector,e0..e{d-1}[,pc1,pc2]`. `sector` is the first digit of
/// the record's first target code.
pub fn write_embeddings<W: Write>(
    emb: &Array2<f64>,
    sectors: &[u8],
    with_pca2d: bool,
    writer: W,
) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    let d = emb.ncols();
    let mut header = vec!["id".to_string(), "sector".to_string()];
    header.extend((0..d).map(|j| format!("e{j}")));
    let pcs = with_pca2d.then(|| {
        header.push("pc1".into());
        header.push("pc2".into());
        pca_2d(emb)
    });
    w.write_record(&header)?;
    for (i, row) in emb.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string(), sectors[i].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        if let Some(p) = &pcs {
            rec.push(p[[i, 0]].to_string());
            rec.push(p[[i, 1]].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Embeds `records` with the checkpoint and writes them; returns the matrix.
pub fn export_embeddings<W: Write>(
    ckpt: &Checkpoint,
    records: &[OccupationRecord],
    with_pca2d: bool,
    writer: W,
) -> Result<Array2<f64>, AnalysisError> {
    let inputs: Vec<_> = records.iter().map(|r| (r.lang, r.text.clone())).collect();
    let emb = embed(ckpt, &inputs)?;
    let sectors: Vec<u8> = records.iter().map(|r| r.targets()[0].major_group()).collect();
    write_embeddings(&emb, &sectors, with_pca2d, writer)?;
    Ok(emb)
}
