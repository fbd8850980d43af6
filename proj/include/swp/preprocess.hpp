#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "swp/tensor.hpp"

namespace swp {

/// An ingested image: rgb channels in [0,1] plus the foreground mask
/// produced by binarize (1 = leaf, 0 = background).
struct LeafImage {
    Tensor rgb;  // (3, H, W)
    Tensor mask; // (1, H, W), entries in {0, 1}
};

/// Otsu threshold on luminance; the polarity making the side with less
/// border contact the foreground; largest connected component kept and
/// its holes filled. Throws Error("no foreground") on constant images.
Tensor binarize(const Tensor& rgb);

Tensor resize_bilinear(const Tensor& img, int64_t out_h, int64_t out_w);
Tensor resize_nearest(const Tensor& img, int64_t out_h, int64_t out_w);

/// read_image + binarize in one step.
LeafImage load_leaf_image(const std::string& path);

struct PatchSet {
    std::vector<Tensor> patches;                      // each (3, px, px)
    std::vector<std::pair<int64_t, int64_t>> origins; // window corners (row, col)
};

/// Raised when fewer than the requested number of windows satisfy the
/// coverage requirement; carries whatever was found so the cascade can
/// fall back to voting over a partial set.
class PatchShortfall : public Error {
public:
    PatchShortfall(PatchSet found_set, size_t requested)
        : Error("patch extraction found only " + std::to_string(found_set.patches.size()) +
                " of " + std::to_string(requested) + " windows meeting the coverage rule"),
          found(std::move(found_set)) {}

    PatchSet found;
};

/// Samples uniformly random patch_px windows (seeded, deterministic)
/// and keeps the first `count` whose leaf coverage is at least
/// min_leaf_fraction. Tries at most 200 * count candidates.
PatchSet extract_patches(const LeafImage& leaf, int64_t count, int64_t patch_px,
                         double min_leaf_fraction, uint32_t seed);

struct AugmentPolicy {
    bool rotate = true;
    float max_rotate_deg = 45.0f;
    bool shift = true;
    float max_shift = 0.1f; // fraction of each image extent
    bool hflip = true;
    bool vflip = true;

    static AugmentPolicy none() { return {false, 45.0f, false, 0.1f, false, false}; }
};

/// One concrete geometric transform; flips are applied first, then the
/// rotation about the image center and the translation.
struct GeomTransform {
    bool hflip = false;
    bool vflip = false;
    float angle_deg = 0.0f;
    float shift_x = 0.0f; // fraction of width
    float shift_y = 0.0f; // fraction of height
};

GeomTransform draw_transform(const AugmentPolicy& policy, std::mt19937& rng);

/// Out-of-frame pixels are filled with 0. nearest=true is used for
/// masks so they stay binary.
Tensor apply_transform(const Tensor& img, const GeomTransform& t, bool nearest);

/// Applies one seeded-random transform from the enabled set to the
/// image (bilinear) and its mask (nearest) identically.
std::pair<Tensor, Tensor> augment(const Tensor& image, const Tensor& mask, uint32_t seed,
                                  const AugmentPolicy& policy);

/// Training-time variant for inputs without a mask.
Tensor augment_image(const Tensor& image, std::mt19937& rng, const AugmentPolicy& policy);

struct ManifestEntry {
    std::string rel_path;
    int64_t class_id;
};

/// Plain-text dataset manifest: one "relative/path<TAB>class_id" line
/// per sample.
std::vector<ManifestEntry> load_manifest(const std::string& path);

} // namespace swp
