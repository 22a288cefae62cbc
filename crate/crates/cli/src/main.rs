use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use texrefine::data::{load_split, render_dataset, SampleIdentity};
use texrefine::harness::{draw_marks, evaluate, infer, offset_marks, parse_texel, run_ablation, train_run, Checkpoint, RunConfig, Variant};
use texrefine::render::io::{write_json, write_rgb_png};
use texrefine::{Error, Result};

/// Texture estimation from a single person image.
#[derive(Parser)]
#[command(name = "texrefine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-view dataset.
    Gen {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split; trailing `--key=value` pairs override the config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and write the metric report as JSON and CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a texture from one stored view and render it.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// A view directory, `<dataset>/<identity>/views/<k>`.
        #[arg(long)]
        image_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the deformable sampling positions of marked texels onto the input.
    Offsets {
        #[arg(long)]
        ckpt: PathBuf,
        /// A view directory, `<dataset>/<identity>/views/<k>`.
        #[arg(long)]
        image: PathBuf,
        /// Texels as `row,col`, separated by `;`.
        #[arg(long, value_delimiter = ';', required = true)]
        uv_points: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the five ablation rows under several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}

/// Splits `<dataset>/<identity>/views/<k>` into its parts.
fn locate_view(dir: &Path) -> Result<(PathBuf, String, usize)> {
    let bad = || Error::Config(format!("{} is not <dataset>/<identity>/views/<k>", dir.display()));
    let k = dir.file_name().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let views = dir.parent().ok_or_else(bad)?;
    if views.file_name().and_then(|s| s.to_str()) != Some("views") {
        return Err(bad());
    }
    let identity = views.parent().ok_or_else(bad)?;
    let id = identity.file_name().and_then(|s| s.to_str()).ok_or_else(bad)?.to_string();
    let root = identity.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((root, id, k))
}

fn load_view(dir: &Path) -> Result<(SampleIdentity<f32>, usize)> {
    let (root, id, k) = locate_view(dir)?;
    let identity = SampleIdentity::load(&root, &id)?;
    if k >= identity.views.len() {
        return Err(Error::Config(format!("identity {id} has no view {k}")));
    }
    Ok((identity, k))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { n, seed, out } => {
            let m = render_dataset(n, seed, &out)?;
            log::info!("wrote {} identities ({} train, {} test) to {}", m.identities.len(), m.train.len(), m.test.len(), out.display());
        }
        Command::Train { config, overrides } => {
            let config = RunConfig::load_with_overrides(config.as_deref(), &overrides)?;
            let (_, train) = load_split::<f32>(&config.dataset, "train")?;
            log::info!("training {} on {} identities", config.fingerprint(), train.len());
            let (trainer, history) = train_run(&config, &train, Some(&config.out))?;
            let last = history.last().map_or(f64::NAN, |b| b.total);
            log::info!("{} steps, final loss {last:.5}; checkpoint in {}", trainer.step, config.out.display());
        }
        Command::Eval { ckpt, dataset, split, out } => {
            let ck = Checkpoint::<f32>::load(&ckpt)?;
            let (_, identities) = load_split::<f32>(&dataset, &split)?;
            let report = evaluate(&ck.model, &ck.config, &identities, &split)?;
            let dir = out.unwrap_or_else(|| ckpt.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            report.write_json(&dir.join(format!("report_{split}.json")))?;
            report.write_csv(&dir.join(format!("report_{split}.csv")))?;
            let m = &report.means;
            println!(
                "{} {split}: ssim sv {:.4} nv {:.4} | psnr sv {:.2} nv {:.2} | cossim sv {:.4} nv {:.4} | pdist sv {:.4} nv {:.4}",
                report.fingerprint, m.ssim_sv, m.ssim_nv, m.psnr_sv, m.psnr_nv, m.cossim_sv, m.cossim_nv, m.pdist_sv, m.pdist_nv
            );
        }
        Command::Infer { ckpt, image_dir, out } => {
            let ck = Checkpoint::<f32>::load(&ckpt)?;
            let (identity, k) = load_view(&image_dir)?;
            let paths = infer(&ck.model, &identity, &identity.views[k])?.write(&out)?;
            log::info!("wrote {} images to {}", paths.len(), out.display());
        }
        Command::Offsets { ckpt, image, uv_points, out } => {
            let ck = Checkpoint::<f32>::load(&ckpt)?;
            let (identity, k) = load_view(&image)?;
            let texels = uv_points.iter().map(|s| parse_texel(s)).collect::<Result<Vec<_>>>()?;
            let view = &identity.views[k];
            let marks = offset_marks(&ck.model, view, &texels)?.ok_or_else(|| Error::Config("the checkpoint has no deformable refinement".into()))?;
            let (_, _, h, w) = view.image.dims4()?;
            let bytes = draw_marks(&view.image, &marks)?;
            write_rgb_png(&out, &bytes, w, h)?;
            write_json(&out.with_extension("json"), &marks.iter().map(|m| (m.texel, m.positions.to_vec())).collect::<Vec<_>>())?;
        }
        Command::Ablate { config, dataset, seeds, out, overrides } => {
            let mut base = RunConfig::load_with_overrides(config.as_deref(), &overrides)?;
            base.dataset = dataset;
            let (_, train) = load_split::<f32>(&base.dataset, "train")?;
            let (_, test) = load_split::<f32>(&base.dataset, "test")?;
            let table = run_ablation(&base, &Variant::TABLE, &seeds, &train, &test, Some(&out))?;
            table.write_csv(&out.join("ablation.csv"))?;
            let md = table.markdown();
            std::fs::write(out.join("ablation.md"), &md).map_err(|e| Error::Io { path: out.join("ablation.md"), source: e })?;
            print!("{md}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_paths_split_into_dataset_identity_and_index() {
        let (root, id, k) = locate_view(Path::new("data/id_0003/views/5")).unwrap();
        assert_eq!((root, id.as_str(), k), (PathBuf::from("data"), "id_0003", 5));
        assert!(locate_view(Path::new("data/id_0003/5")).is_err());
        assert!(locate_view(Path::new("data/id_0003/views/x")).is_err());
    }

    #[test]
    fn cli_parses_overrides_and_lists() {
        let cli = Cli::try_parse_from(["texrefine", "train", "--config", "c.json", "--use_url=false", "--width=16"]).unwrap();
        let Command::Train { overrides, .. } = cli.command else { panic!() };
        assert_eq!(overrides, ["--use_url=false", "--width=16"]);
        let cli = Cli::try_parse_from(["texrefine", "ablate", "--dataset", "d", "--out", "o", "--seeds", "4,5"]).unwrap();
        let Command::Ablate { seeds, .. } = cli.command else { panic!() };
        assert_eq!(seeds, [4, 5]);
    }
}
