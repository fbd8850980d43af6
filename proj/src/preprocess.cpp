#include "swp/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include "swp/image.hpp"

namespace swp {

namespace {

std::vector<float> luminance(const Tensor& rgb) {
    const int64_t plane = rgb.dim(1) * rgb.dim(2);
    std::vector<float> lum(static_cast<size_t>(plane));
    if (rgb.dim(0) == 1) {
        std::copy(rgb.data(), rgb.data() + plane, lum.begin());
    } else {
        const float* r = rgb.data();
        const float* g = rgb.data() + plane;
        const float* b = rgb.data() + 2 * plane;
        for (int64_t i = 0; i < plane; ++i)
            lum[static_cast<size_t>(i)] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    }
    return lum;
}

// Threshold index maximizing the between-class variance; -1 when the
// histogram cannot be split (constant image).
int otsu_threshold(const std::vector<int64_t>& hist) {
    int64_t total = 0;
    double total_sum = 0.0;
    for (size_t i = 0; i < hist.size(); ++i) {
        total += hist[i];
        total_sum += static_cast<double>(hist[i]) * static_cast<double>(i);
    }
    int best = -1;
    double best_var = 0.0;
    int64_t w0 = 0;
    double sum0 = 0.0;
    for (size_t t = 0; t + 1 < hist.size(); ++t) {
        w0 += hist[t];
        sum0 += static_cast<double>(hist[t]) * static_cast<double>(t);
        const int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0)
            continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (total_sum - sum0) / w1;
        const double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) *
                           (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best = static_cast<int>(t);
        }
    }
    return best;
}

// 4-connected flood fill over `accept`ed pixels starting from `seeds`,
// writing `label`.
template <typename Accept>
void flood(std::vector<int32_t>& labels, int64_t h, int64_t w, std::deque<int64_t>& seeds,
           int32_t label, Accept accept) {
    while (!seeds.empty()) {
        const int64_t p = seeds.front();
        seeds.pop_front();
        const int64_t y = p / w, x = p % w;
        const int64_t neigh[4] = {p - w, p + w, p - 1, p + 1};
        const bool ok[4] = {y > 0, y + 1 < h, x > 0, x + 1 < w};
        for (int k = 0; k < 4; ++k) {
            if (!ok[k])
                continue;
            const int64_t q = neigh[k];
            if (labels[static_cast<size_t>(q)] == 0 && accept(q)) {
                labels[static_cast<size_t>(q)] = label;
                seeds.push_back(q);
            }
        }
    }
}

} // namespace

Tensor binarize(const Tensor& rgb) {
    if (rgb.rank() != 3 || (rgb.dim(0) != 1 && rgb.dim(0) != 3))
        throw ShapeError("binarize: expected (1|3,H,W) image, got " + rgb.dims_str());
    const int64_t h = rgb.dim(1), w = rgb.dim(2);
    const std::vector<float> lum = luminance(rgb);

    std::vector<int64_t> hist(256, 0);
    for (float v : lum) {
        int bin = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        ++hist[static_cast<size_t>(bin)];
    }
    const int thresh = otsu_threshold(hist);
    if (thresh < 0)
        throw Error("binarize: no foreground (image has a single intensity level)");

    // bright = 1 above threshold
    std::vector<uint8_t> bright(lum.size());
    for (size_t i = 0; i < lum.size(); ++i)
        bright[i] = std::lround(std::clamp(lum[i], 0.0f, 1.0f) * 255.0f) > thresh ? 1 : 0;

    // foreground polarity: the side with less border contact
    int64_t border_bright = 0, border_total = 0;
    auto visit_border = [&](int64_t y, int64_t x) {
        border_bright += bright[static_cast<size_t>(y * w + x)];
        ++border_total;
    };
    for (int64_t x = 0; x < w; ++x) {
        visit_border(0, x);
        if (h > 1) visit_border(h - 1, x);
    }
    for (int64_t y = 1; y + 1 < h; ++y) {
        visit_border(y, 0);
        if (w > 1) visit_border(y, w - 1);
    }
    const uint8_t fg_value = border_bright * 2 <= border_total ? 1 : 0;

    // largest 4-connected foreground component
    std::vector<int32_t> labels(static_cast<size_t>(h * w), 0);
    int32_t next_label = 0;
    int32_t best_label = 0;
    int64_t best_size = 0;
    std::deque<int64_t> queue;
    for (int64_t p = 0; p < h * w; ++p) {
        if (labels[static_cast<size_t>(p)] != 0 || bright[static_cast<size_t>(p)] != fg_value)
            continue;
        const int32_t label = ++next_label;
        labels[static_cast<size_t>(p)] = label;
        queue.assign(1, p);
        int64_t size = 1;
        while (!queue.empty()) {
            const int64_t q = queue.front();
            queue.pop_front();
            const int64_t y = q / w, x = q % w;
            const int64_t neigh[4] = {q - w, q + w, q - 1, q + 1};
            const bool ok[4] = {y > 0, y + 1 < h, x > 0, x + 1 < w};
            for (int k = 0; k < 4; ++k) {
                if (!ok[k])
                    continue;
                const int64_t r = neigh[k];
                if (labels[static_cast<size_t>(r)] == 0 &&
                    bright[static_cast<size_t>(r)] == fg_value) {
                    labels[static_cast<size_t>(r)] = label;
                    queue.push_back(r);
                    ++size;
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = label;
        }
    }
    if (best_label == 0)
        throw Error("binarize: no foreground");

    // fill holes: complement pixels unreachable from the border belong
    // to the leaf
    std::vector<int32_t> reach(static_cast<size_t>(h * w), 0);
    std::deque<int64_t> seeds;
    auto is_complement = [&](int64_t p) {
        return labels[static_cast<size_t>(p)] != best_label;
    };
    auto seed_border = [&](int64_t p) {
        if (is_complement(p) && reach[static_cast<size_t>(p)] == 0) {
            reach[static_cast<size_t>(p)] = 1;
            seeds.push_back(p);
        }
    };
    for (int64_t x = 0; x < w; ++x) {
        seed_border(x);
        seed_border((h - 1) * w + x);
    }
    for (int64_t y = 0; y < h; ++y) {
        seed_border(y * w);
        seed_border(y * w + w - 1);
    }
    flood(reach, h, w, seeds, 1, is_complement);

    Tensor mask({1, h, w});
    for (int64_t p = 0; p < h * w; ++p) {
        const bool leaf = labels[static_cast<size_t>(p)] == best_label ||
                          reach[static_cast<size_t>(p)] == 0;
        mask[p] = leaf ? 1.0f : 0.0f;
    }
    return mask;
}

Tensor resize_bilinear(const Tensor& img, int64_t out_h, int64_t out_w) {
    if (img.rank() != 3)
        throw ShapeError("resize: expected (C,H,W), got " + img.dims_str());
    if (out_h < 1 || out_w < 1)
        throw ShapeError("resize: target extents must be >= 1");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* src = img.data() + ch * h * w;
        float* dst = out.data() + ch * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fy)), 0, h - 1);
            const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
            const double wy = std::clamp(fy - static_cast<double>(y0), 0.0, 1.0);
            for (int64_t x = 0; x < out_w; ++x) {
                const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                const int64_t x0 =
                    std::clamp<int64_t>(static_cast<int64_t>(std::floor(fx)), 0, w - 1);
                const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
                const double wx = std::clamp(fx - static_cast<double>(x0), 0.0, 1.0);
                const double top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                const double bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[y * out_w + x] = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

Tensor resize_nearest(const Tensor& img, int64_t out_h, int64_t out_w) {
    if (img.rank() != 3)
        throw ShapeError("resize: expected (C,H,W), got " + img.dims_str());
    if (out_h < 1 || out_w < 1)
        throw ShapeError("resize: target extents must be >= 1");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* src = img.data() + ch * h * w;
        float* dst = out.data() + ch * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            const int64_t yy = std::clamp<int64_t>(
                static_cast<int64_t>(std::floor((static_cast<double>(y) + 0.5) * sy)), 0, h - 1);
            for (int64_t x = 0; x < out_w; ++x) {
                const int64_t xx = std::clamp<int64_t>(
                    static_cast<int64_t>(std::floor((static_cast<double>(x) + 0.5) * sx)), 0,
                    w - 1);
                dst[y * out_w + x] = src[yy * w + xx];
            }
        }
    }
    return out;
}

LeafImage load_leaf_image(const std::string& path) {
    Tensor rgb = image_to_rgb_tensor(read_image(path));
    Tensor mask = binarize(rgb);
    return {std::move(rgb), std::move(mask)};
}

PatchSet extract_patches(const LeafImage& leaf, int64_t count, int64_t patch_px,
                         double min_leaf_fraction, uint32_t seed) {
    if (count < 1)
        throw Error("extract_patches: count must be >= 1");
    if (min_leaf_fraction <= 0.0 || min_leaf_fraction > 1.0)
        throw Error("extract_patches: min_leaf_fraction must be in (0,1]");
    const int64_t h = leaf.mask.dim(1), w = leaf.mask.dim(2);
    PatchSet set;
    if (h < patch_px || w < patch_px)
        throw PatchShortfall(std::move(set), static_cast<size_t>(count));

    // integral image for O(1) window coverage counts
    std::vector<int64_t> integral(static_cast<size_t>((h + 1) * (w + 1)), 0);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            integral[(y + 1) * (w + 1) + (x + 1)] =
                (leaf.mask[y * w + x] > 0.5f ? 1 : 0) + integral[y * (w + 1) + (x + 1)] +
                integral[(y + 1) * (w + 1) + x] - integral[y * (w + 1) + x];
    auto window_count = [&](int64_t r, int64_t c) {
        return integral[(r + patch_px) * (w + 1) + (c + patch_px)] -
               integral[r * (w + 1) + (c + patch_px)] -
               integral[(r + patch_px) * (w + 1) + c] + integral[r * (w + 1) + c];
    };

    const double needed = min_leaf_fraction * static_cast<double>(patch_px * patch_px) - 1e-6;
    std::mt19937 rng(seed);
    const int64_t max_r = h - patch_px;
    const int64_t max_c = w - patch_px;
    const int64_t max_tries = 200 * count;
    for (int64_t t = 0; t < max_tries && static_cast<int64_t>(set.patches.size()) < count; ++t) {
        const int64_t r = static_cast<int64_t>(rng() % static_cast<uint32_t>(max_r + 1));
        const int64_t c = static_cast<int64_t>(rng() % static_cast<uint32_t>(max_c + 1));
        if (static_cast<double>(window_count(r, c)) < needed)
            continue;
        Tensor patch({3, patch_px, patch_px});
        for (int64_t ch = 0; ch < 3; ++ch) {
            const float* src = leaf.rgb.data() + ch * h * w;
            float* dst = patch.data() + ch * patch_px * patch_px;
            for (int64_t y = 0; y < patch_px; ++y)
                std::copy(src + (r + y) * w + c, src + (r + y) * w + c + patch_px,
                          dst + y * patch_px);
        }
        set.patches.push_back(std::move(patch));
        set.origins.emplace_back(r, c);
    }
    if (static_cast<int64_t>(set.patches.size()) < count)
        throw PatchShortfall(std::move(set), static_cast<size_t>(count));
    return set;
}

GeomTransform draw_transform(const AugmentPolicy& policy, std::mt19937& rng) {
    auto unit = [&rng]() { return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f); };
    GeomTransform t;
    if (policy.hflip)
        t.hflip = unit() < 0.5f;
    if (policy.vflip)
        t.vflip = unit() < 0.5f;
    if (policy.rotate)
        t.angle_deg = (2.0f * unit() - 1.0f) * policy.max_rotate_deg;
    if (policy.shift) {
        t.shift_x = (2.0f * unit() - 1.0f) * policy.max_shift;
        t.shift_y = (2.0f * unit() - 1.0f) * policy.max_shift;
    }
    return t;
}

Tensor apply_transform(const Tensor& img, const GeomTransform& t, bool nearest) {
    if (img.rank() != 3)
        throw ShapeError("apply_transform: expected (C,H,W), got " + img.dims_str());
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const double rad = static_cast<double>(t.angle_deg) * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double tx = static_cast<double>(t.shift_x) * static_cast<double>(w);
    const double ty = static_cast<double>(t.shift_y) * static_cast<double>(h);

    Tensor out(img.dims());
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* src = img.data() + ch * h * w;
        float* dst = out.data() + ch * h * w;
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                // invert: undo translation, rotation, then flips
                const double ux = static_cast<double>(x) - cx - tx;
                const double uy = static_cast<double>(y) - cy - ty;
                double fx = cs * ux + sn * uy + cx;
                double fy = -sn * ux + cs * uy + cy;
                if (t.hflip)
                    fx = static_cast<double>(w) - 1.0 - fx;
                if (t.vflip)
                    fy = static_cast<double>(h) - 1.0 - fy;
                float v = 0.0f;
                if (nearest) {
                    const int64_t ix = static_cast<int64_t>(std::lround(fx));
                    const int64_t iy = static_cast<int64_t>(std::lround(fy));
                    if (ix >= 0 && ix < w && iy >= 0 && iy < h)
                        v = src[iy * w + ix];
                } else if (fx > -1.0 && fx < static_cast<double>(w) && fy > -1.0 &&
                           fy < static_cast<double>(h)) {
                    const int64_t x0 = static_cast<int64_t>(std::floor(fx));
                    const int64_t y0 = static_cast<int64_t>(std::floor(fy));
                    const double wx = fx - static_cast<double>(x0);
                    const double wy = fy - static_cast<double>(y0);
                    auto sample = [&](int64_t yy, int64_t xx) -> double {
                        return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? src[yy * w + xx] : 0.0;
                    };
                    const double top = sample(y0, x0) * (1.0 - wx) + sample(y0, x0 + 1) * wx;
                    const double bot = sample(y0 + 1, x0) * (1.0 - wx) + sample(y0 + 1, x0 + 1) * wx;
                    v = static_cast<float>(top * (1.0 - wy) + bot * wy);
                }
                dst[y * w + x] = v;
            }
        }
    }
    return out;
}

std::pair<Tensor, Tensor> augment(const Tensor& image, const Tensor& mask, uint32_t seed,
                                  const AugmentPolicy& policy) {
    std::mt19937 rng(seed);
    const GeomTransform t = draw_transform(policy, rng);
    return {apply_transform(image, t, false), apply_transform(mask, t, true)};
}

Tensor augment_image(const Tensor& image, std::mt19937& rng, const AugmentPolicy& policy) {
    return apply_transform(image, draw_transform(policy, rng), false);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open manifest " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("manifest " + path + ":" + std::to_string(lineno) +
                          ": expected 'path<TAB>class_id'");
        entries.push_back(
            {line.substr(0, tab), std::stoll(line.substr(tab + 1))});
    }
    if (entries.empty())
        throw IoError("manifest " + path + " is empty");
    return entries;
}

} // namespace swp
