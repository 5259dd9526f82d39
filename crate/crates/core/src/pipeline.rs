//! File-level embed and restore: padding, normalization and patching around
//! the raw networks.

use crate::autodiff::Scalar;
use crate::embedder::EmbedResult;
use crate::error::{ensure, Result};
use crate::geometry::{
    farthest_point_sample, merge_patches, normalize_unit_sphere, split_patches, squared_distance, PointCloud,
    DEFAULT_DEDUP_RADIUS, DEFAULT_OVERLAP_FACTOR,
};
use crate::io::CloudMeta;
use crate::model::Model;

/// Default dense patch size for oversized restorations.
pub const DEFAULT_PATCH_SIZE: usize = 2048;

/// Appends duplicates of FPS-selected points until the count is a multiple of
/// `r`. Returns the padded cloud and the number of appended points.
pub fn pad_to_multiple(cloud: &PointCloud, r: usize, fps_start: usize) -> Result<(PointCloud, usize)> {
    let pad = (r - cloud.len() % r) % r;
    if pad == 0 {
        return Ok((cloud.clone(), 0));
    }
    ensure!(
        pad <= cloud.len(),
        InvalidInput,
        "cannot pad {} points to a multiple of {r}",
        cloud.len()
    );
    let picks = farthest_point_sample(cloud, pad, fps_start.min(cloud.len() - 1))?;
    let padded = PointCloud::concat(&[cloud.clone(), cloud.select(&picks)])?;
    Ok((padded, pad))
}

/// Drops the `pad` points whose nearest neighbour is closest, i.e. the most
/// redundant ones. Ties go to the lowest index.
pub fn remove_padding(cloud: &PointCloud, pad: usize) -> Result<PointCloud> {
    if pad == 0 {
        return Ok(cloud.clone());
    }
    ensure!(
        pad < cloud.len(),
        InvalidInput,
        "pad {pad} leaves no points out of {}",
        cloud.len()
    );
    let pts = cloud.points();
    let nn: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| squared_distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| nn[a].total_cmp(&nn[b]).then(a.cmp(&b)));
    let mut drop = vec![false; pts.len()];
    for &i in &order[..pad] {
        drop[i] = true;
    }
    let keep: Vec<usize> = (0..pts.len()).filter(|&i| !drop[i]).collect();
    Ok(cloud.select(&keep))
}

/// Embedding of a file cloud: the self-embedded set in the input frame plus
/// the metadata `restore_cloud` needs.
#[derive(Debug, Clone)]
pub struct EmbeddedCloud<T> {
    pub q: PointCloud,
    pub meta: CloudMeta,
    pub result: EmbedResult<T>,
}

pub fn embed_cloud<T: Scalar>(model: &Model<T>, cloud: &PointCloud) -> Result<EmbeddedCloud<T>> {
    let (padded, pad) = pad_to_multiple(cloud, model.config.ratio, model.config.fps_start)?;
    let (normed, transform) = normalize_unit_sphere(&padded);
    let result = model.embed(&normed)?;
    Ok(EmbeddedCloud {
        q: transform.invert_cloud(&result.q_cloud()?),
        meta: CloudMeta {
            pad,
            transform: Some(transform),
        },
        result,
    })
}

/// Restores `q` in its own frame. Without a stored transform the sparse set is
/// normalized on its own. With `patch_size` set and more than `patch_size`
/// dense outputs, the sparse set is split into patches of `patch_size / r`
/// points that are restored independently and merged.
pub fn restore_cloud<T: Scalar>(
    model: &Model<T>,
    q: &PointCloud,
    meta: &CloudMeta,
    patch_size: Option<usize>,
) -> Result<PointCloud> {
    let r = model.config.ratio;
    let (normed, transform) = match &meta.transform {
        Some(t) => (t.apply_cloud(q), *t),
        None => normalize_unit_sphere(q),
    };
    let restored = match patch_size {
        Some(size) if q.len() * r > size => {
            let q_patch = size / r;
            ensure!(
                q_patch >= model.config.k_conv,
                InvalidArgument,
                "patch size {size} gives {q_patch} sparse points per patch, need at least {}",
                model.config.k_conv
            );
            let (patches, layout) = split_patches(&normed, q_patch, DEFAULT_OVERLAP_FACTOR)?;
            let outs = patches
                .iter()
                .map(|p| model.restore(p)?.r_cloud())
                .collect::<Result<Vec<_>>>()?;
            merge_patches(&outs, &layout, DEFAULT_DEDUP_RADIUS)?
        }
        _ => model.restore(&normed)?.r_cloud()?,
    };
    remove_padding(&transform.invert_cloud(&restored), meta.pad)
}
