use anyhow::{bail, Result};
use clap::Args;
use greyfuse_core::dataset::load_rgb_image;
use greyfuse_core::eval::{distance_matrix, rank_list, read_features, RankEntry};
use greyfuse_core::dataset::ImageRecord;
use image::RgbImage;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::config::RunConfig;

/// Emit the top-k ranking of one query as a bordered montage plus a text
/// listing.
#[derive(Debug, Args)]
pub struct RankArgs {
    /// Query feature file.
    #[arg(long)]
    pub query: PathBuf,
    /// Gallery feature file.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Row index into the query feature file.
    #[arg(long = "query-index")]
    pub query_index: Option<usize>,
    /// Alternatively: first query with this person id.
    #[arg(long = "query-id")]
    pub query_id: Option<i64>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Montage image path (default <out>/rank_<index>.png).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

const TILE_W: u32 = 64;
const TILE_H: u32 = 192;
const BORDER: u32 = 4;
const GAP: u32 = 6;

fn bordered_tile(img: &RgbImage, border: [u8; 3]) -> RgbImage {
    let inner = image::imageops::resize(
        img,
        TILE_W - 2 * BORDER,
        TILE_H - 2 * BORDER,
        image::imageops::FilterType::Triangle,
    );
    let mut tile = RgbImage::from_pixel(TILE_W, TILE_H, image::Rgb(border));
    image::imageops::replace(&mut tile, &inner, BORDER as i64, BORDER as i64);
    tile
}

fn montage(query_img: &RgbImage, entries: &[(RgbImage, bool)]) -> RgbImage {
    let n = 1 + entries.len() as u32;
    let width = n * TILE_W + (n - 1) * GAP;
    let mut canvas = RgbImage::from_pixel(width, TILE_H, image::Rgb([255, 255, 255]));
    let query_tile = bordered_tile(query_img, [40, 90, 220]);
    image::imageops::replace(&mut canvas, &query_tile, 0, 0);
    for (i, (img, positive)) in entries.iter().enumerate() {
        let color = if *positive { [0, 190, 60] } else { [220, 40, 40] };
        let tile = bordered_tile(img, color);
        let x = (i as u32 + 1) * (TILE_W + GAP);
        image::imageops::replace(&mut canvas, &tile, x as i64, 0);
    }
    canvas
}

fn listing(query: &ImageRecord, entries: &[RankEntry], gallery: &[ImageRecord]) -> String {
    let mut s = format!(
        "query: {} (id {}, camera {})\n",
        query.image_path.display(),
        query.person_id,
        query.camera_id
    );
    for (i, e) in entries.iter().enumerate() {
        let g = &gallery[e.gallery_index];
        writeln!(
            s,
            "rank {:>2}  {}  id {:>4}  camera {}  distance {:.6}  {}",
            i + 1,
            g.image_path.display(),
            g.person_id,
            g.camera_id,
            e.distance,
            if e.positive { "positive" } else { "negative" }
        )
        .expect("string write");
    }
    s
}

pub fn run_rank(cfg: &RunConfig, args: &RankArgs) -> Result<()> {
    let (q, q_recs) = read_features(&args.query)?;
    let (g, g_recs) = read_features(&args.gallery)?;

    let index = match (args.query_index, args.query_id) {
        (Some(i), _) => i,
        (None, Some(pid)) => match q_recs.iter().position(|r| r.person_id == pid) {
            Some(i) => i,
            None => bail!(greyfuse_core::Error::InvalidArgument(format!(
                "no query with person id {pid}"
            ))),
        },
        (None, None) => bail!(greyfuse_core::Error::InvalidArgument(
            "pass --query-index or --query-id".into()
        )),
    };

    let dist = distance_matrix(q.view(), g.view())?;
    let entries = rank_list(index, &dist, &q_recs, &g_recs, args.k)?;
    let text = listing(&q_recs[index], &entries, &g_recs);
    print!("{text}");

    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let list_path = out_dir.join(format!("rank_{index}.txt"));
    std::fs::write(&list_path, &text)?;

    // Montage wants the source pixels; fall back to the text listing when
    // any image is missing.
    let images: greyfuse_core::Result<Vec<(RgbImage, bool)>> = entries
        .iter()
        .map(|e| Ok((load_rgb_image(&g_recs[e.gallery_index].image_path)?, e.positive)))
        .collect();
    match (load_rgb_image(&q_recs[index].image_path), images) {
        (Ok(qimg), Ok(tiles)) => {
            let img = montage(&qimg, &tiles);
            let path = args
                .output
                .clone()
                .unwrap_or_else(|| out_dir.join(format!("rank_{index}.png")));
            img.save(&path)?;
            println!("montage written to {}", path.display());
        }
        (q_res, g_res) => {
            let why = q_res
                .err()
                .map(|e| e.to_string())
                .or_else(|| g_res.err().map(|e| e.to_string()))
                .unwrap_or_default();
            log::warn!("montage skipped, source image unavailable: {why}");
            println!("montage skipped (missing source images); listing at {}", list_path.display());
        }
    }
    Ok(())
}
