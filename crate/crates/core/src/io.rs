//! File formats: human-readable checkpoints and the binary instance store.

use crate::aud::AudParams;
use crate::error::{CoreError, Result};
use crate::linalg::CMat;
use crate::scenario::Instance;
use crate::unfolded::{LayerParams, UnfoldedParams};
use num_complex::Complex64;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Trained model: the unfolded-network scalars plus the AUD head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub unfolded: UnfoldedParams,
    pub aud: AudParams,
}

const CHECKPOINT_HEADER: &str = "dujad-checkpoint v1";

/// Serializes a checkpoint as a layer-indexed scalar table. Floats use the
/// shortest round-trip decimal form, so parsing reproduces them exactly.
pub fn checkpoint_to_string(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    out.push_str(&format!("layers {}\n", ckpt.unfolded.k()));
    out.push_str(&format!("p_a {}\n", ckpt.unfolded.p_a));
    for (i, l) in ckpt.unfolded.layers.iter().enumerate() {
        out.push_str(&format!(
            "layer {i} tau_h {} tau_x {} eta_h {} eta_x {} mu_h {} lambda {} nu {} log_ne {}\n",
            l.tau_h, l.tau_x, l.eta_h, l.eta_x, l.mu_h, l.lambda, l.nu, l.log_ne
        ));
    }
    out.push_str(&format!(
        "aud omega_h {} omega_x {} t_th {} l_bar {}\n",
        ckpt.aud.omega_h, ckpt.aud.omega_x, ckpt.aud.t_th, ckpt.aud.l_bar
    ));
    out
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(ckpt))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn parse_checkpoint(text: &str, path_for_errors: &str) -> Result<Checkpoint> {
    let err = |line: usize, reason: String| CoreError::Parse {
        path: path_for_errors.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty checkpoint".into()))?;
    if header.trim() != CHECKPOINT_HEADER {
        return Err(err(1, format!("unexpected header `{header}`")));
    }

    let mut layer_count: Option<usize> = None;
    let mut p_a: Option<f64> = None;
    let mut layers: Vec<(usize, LayerParams)> = Vec::new();
    let mut aud: Option<AudParams> = None;

    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let lineno = idx + 1;
        match tokens[0] {
            "layers" => {
                layer_count = Some(
                    tokens
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(lineno, "bad layer count".into()))?,
                );
            }
            "p_a" => {
                p_a = Some(
                    tokens
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(lineno, "bad p_a".into()))?,
                );
            }
            "layer" => {
                if tokens.len() != 18 {
                    return Err(err(lineno, "layer row needs 8 named scalars".into()));
                }
                let index: usize = tokens[1]
                    .parse()
                    .map_err(|_| err(lineno, "bad layer index".into()))?;
                let mut fields = std::collections::HashMap::new();
                for pair in tokens[2..].chunks(2) {
                    let v: f64 = pair[1]
                        .parse()
                        .map_err(|_| err(lineno, format!("bad value for {}", pair[0])))?;
                    fields.insert(pair[0], v);
                }
                let get = |name: &str| -> Result<f64> {
                    fields
                        .get(name)
                        .copied()
                        .ok_or_else(|| err(lineno, format!("missing field {name}")))
                };
                layers.push((
                    index,
                    LayerParams {
                        tau_h: get("tau_h")?,
                        tau_x: get("tau_x")?,
                        eta_h: get("eta_h")?,
                        eta_x: get("eta_x")?,
                        mu_h: get("mu_h")?,
                        lambda: get("lambda")?,
                        nu: get("nu")?,
                        log_ne: get("log_ne")?,
                    },
                ));
            }
            "aud" => {
                if tokens.len() != 9 {
                    return Err(err(lineno, "aud row needs 4 named scalars".into()));
                }
                let mut fields = std::collections::HashMap::new();
                for pair in tokens[1..].chunks(2) {
                    let v: f64 = pair[1]
                        .parse()
                        .map_err(|_| err(lineno, format!("bad value for {}", pair[0])))?;
                    fields.insert(pair[0], v);
                }
                let get = |name: &str| -> Result<f64> {
                    fields
                        .get(name)
                        .copied()
                        .ok_or_else(|| err(lineno, format!("missing field {name}")))
                };
                aud = Some(AudParams {
                    omega_h: get("omega_h")?,
                    omega_x: get("omega_x")?,
                    t_th: get("t_th")?,
                    l_bar: get("l_bar")?,
                });
            }
            other => return Err(err(lineno, format!("unknown row `{other}`"))),
        }
    }

    let k = layer_count.ok_or_else(|| err(0, "missing `layers` row".into()))?;
    let p_a = p_a.ok_or_else(|| err(0, "missing `p_a` row".into()))?;
    let aud = aud.ok_or_else(|| err(0, "missing `aud` row".into()))?;
    if layers.len() != k {
        return Err(err(
            0,
            format!("expected {k} layer rows, found {}", layers.len()),
        ));
    }
    layers.sort_by_key(|(i, _)| *i);
    for (want, (got, _)) in layers.iter().enumerate() {
        if *got != want {
            return Err(err(0, format!("layer indices not contiguous at {got}")));
        }
    }
    let unfolded = UnfoldedParams {
        layers: layers.into_iter().map(|(_, l)| l).collect(),
        p_a,
    };
    unfolded.validate()?;
    if !(0.0..=1.0).contains(&aud.l_bar) {
        return Err(err(0, "l_bar outside [0, 1]".into()));
    }
    Ok(Checkpoint { unfolded, aud })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

const DATASET_MAGIC: &[u8; 4] = b"DUJD";
const DATASET_VERSION: u32 = 1;

/// Dimensions header of an instance file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetDims {
    pub count: usize,
    pub n_ue: usize,
    pub n_ap: usize,
    pub ant_per_ap: usize,
    pub pilot_len: usize,
    pub data_len: usize,
}

fn write_mat<W: Write>(w: &mut W, m: &CMat) -> std::io::Result<()> {
    for z in m.iter() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_mat<R: Read>(r: &mut R, rows: usize, cols: usize) -> std::io::Result<CMat> {
    let mut buf = vec![0u8; rows * cols * 16];
    r.read_exact(&mut buf)?;
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in buf.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..].try_into().unwrap());
        data.push(Complex64::new(re, im));
    }
    Ok(CMat::from_shape_vec((rows, cols), data).expect("sized above"))
}

/// Writes instances as a dims header followed by row-major little-endian
/// complex arrays (xi bytes, then Y, H, X_P, X_D per instance).
pub fn write_instances(path: &Path, qpsk_amp: f64, instances: &[Instance]) -> Result<()> {
    let io_err = |e| CoreError::io(path.display().to_string(), e);
    if instances.is_empty() {
        return Err(CoreError::Domain("refusing to write an empty dataset".into()));
    }
    let first = &instances[0];
    let dims = DatasetDims {
        count: instances.len(),
        n_ue: first.n_ue(),
        n_ap: first.h.nrows() / first.ant_per_ap,
        ant_per_ap: first.ant_per_ap,
        pilot_len: first.x_p.ncols(),
        data_len: first.data_len(),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        for v in [
            dims.count,
            dims.n_ue,
            dims.n_ap,
            dims.ant_per_ap,
            dims.pilot_len,
            dims.data_len,
        ] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&qpsk_amp.to_le_bytes())?;
        for inst in instances {
            for &x in &inst.xi {
                w.write_all(&[u8::from(x)])?;
            }
            write_mat(&mut w, &inst.y)?;
            write_mat(&mut w, &inst.h)?;
            write_mat(&mut w, &inst.x_p)?;
            write_mat(&mut w, &inst.x_d)?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

/// Reads an instance file written by `write_instances`.
pub fn read_instances(path: &Path) -> Result<(DatasetDims, f64, Vec<Instance>)> {
    let io_err = |e| CoreError::io(path.display().to_string(), e);
    let parse_err = |reason: String| CoreError::Parse {
        path: path.display().to_string(),
        line: 0,
        reason,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != DATASET_MAGIC {
        return Err(parse_err("bad magic; not an instance file".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DATASET_VERSION {
        return Err(parse_err(format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<std::fs::File>| -> Result<usize> {
        r.read_exact(&mut u64buf).map_err(io_err)?;
        Ok(u64::from_le_bytes(u64buf) as usize)
    };
    let count = next_u64(&mut r)?;
    let n_ue = next_u64(&mut r)?;
    let n_ap = next_u64(&mut r)?;
    let ant_per_ap = next_u64(&mut r)?;
    let pilot_len = next_u64(&mut r)?;
    let data_len = next_u64(&mut r)?;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf).map_err(io_err)?;
    let qpsk_amp = f64::from_le_bytes(f64buf);

    let dims = DatasetDims {
        count,
        n_ue,
        n_ap,
        ant_per_ap,
        pilot_len,
        data_len,
    };
    let mp = n_ap * ant_per_ap;
    let total = pilot_len + data_len;
    let mut instances = Vec::with_capacity(count);
    for _ in 0..count {
        let mut xi_bytes = vec![0u8; n_ue];
        r.read_exact(&mut xi_bytes).map_err(io_err)?;
        let xi: Vec<bool> = xi_bytes.iter().map(|&b| b != 0).collect();
        let y = read_mat(&mut r, mp, total).map_err(io_err)?;
        let h = read_mat(&mut r, mp, n_ue).map_err(io_err)?;
        let x_p = read_mat(&mut r, n_ue, pilot_len).map_err(io_err)?;
        let x_d = read_mat(&mut r, n_ue, data_len).map_err(io_err)?;
        let n_active = xi.iter().filter(|&&a| a).count();
        instances.push(Instance {
            y,
            h,
            x_p,
            x_d,
            xi,
            n_active,
            qpsk_amp,
            ant_per_ap,
        });
    }
    Ok((dims, qpsk_amp, instances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_instance;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let ckpt = Checkpoint {
            unfolded: UnfoldedParams {
                layers: (0..4)
                    .map(|i| LayerParams {
                        tau_h: 0.1 / (i + 1) as f64,
                        tau_x: 3.7e-4,
                        eta_h: -0.125,
                        eta_x: 0.5,
                        mu_h: 2.25,
                        lambda: 1.0 + i as f64 * 0.01,
                        nu: -0.3333333333333333,
                        log_ne: 0.7071067811865476,
                    })
                    .collect(),
                p_a: 0.2,
            },
            aud: AudParams {
                omega_h: 1.5e-2,
                omega_x: -0.75,
                t_th: 12.125,
                l_bar: 0.5,
            },
        };
        let text = checkpoint_to_string(&ckpt);
        let back = parse_checkpoint(&text, "inline").unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(parse_checkpoint("not a checkpoint", "x").is_err());
        let partial = format!("{CHECKPOINT_HEADER}\nlayers 2\np_a 0.2\n");
        assert!(parse_checkpoint(&partial, "x").is_err());
        let bad = format!("{CHECKPOINT_HEADER}\nlayers 1\np_a 0.2\nwhat 3\n");
        assert!(parse_checkpoint(&bad, "x").is_err());
    }

    #[test]
    fn instance_file_roundtrip() {
        let dir = std::env::temp_dir().join("dujad_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("instances.bin");
        let instances: Vec<Instance> = (0..3).map(|i| tiny_instance(60 + i)).collect();
        write_instances(&path, instances[0].qpsk_amp, &instances).unwrap();
        let (dims, amp, back) = read_instances(&path).unwrap();
        assert_eq!(dims.count, 3);
        assert_eq!(dims.n_ue, 6);
        assert_eq!(amp, instances[0].qpsk_amp);
        for (a, b) in instances.iter().zip(back.iter()) {
            assert_eq!(a.xi, b.xi);
            assert_eq!(a.n_active, b.n_active);
            assert_eq!(a.y, b.y);
            assert_eq!(a.h, b.h);
            assert_eq!(a.x_p, b.x_p);
            assert_eq!(a.x_d, b.x_d);
            assert_eq!(a.ant_per_ap, b.ant_per_ap);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn instance_file_rejects_wrong_magic() {
        let dir = std::env::temp_dir().join("dujad_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.bin");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(read_instances(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
