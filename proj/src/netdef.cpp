#include "swp/netdef.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

#include "swp/image.hpp"

namespace swp {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::avgpool2: return "avgpool2";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
    }
    return "?";
}

NetworkDef build_s_leafnet(int64_t class_count) {
    using L = LayerSpec;
    NetworkDef def;
    def.name = "s_leafnet";
    def.input_dims = {1, 128, 128};
    def.class_count = class_count;
    def.layers = {
        L::conv(64),  L::bn(), L::relu(), L::maxpool(),
        L::conv(128), L::bn(), L::relu(), L::maxpool(), L::dropout(0.1f),
        L::conv(160), L::bn(), L::relu(), L::maxpool(), L::dropout(0.2f),
        L::conv(224), L::bn(), L::relu(), L::maxpool(), L::dropout(0.3f),
        L::conv(256), L::bn(), L::relu(), L::avgpool(), L::dropout(0.4f),
        L::flatten(), L::dense(class_count), L::softmax(),
    };
    return def;
}

NetworkDef build_w_leafnet(int64_t class_count) {
    using L = LayerSpec;
    NetworkDef def;
    def.name = "w_leafnet";
    def.input_dims = {3, 196, 196};
    def.class_count = class_count;
    def.layers = {
        L::conv(64),  L::bn(), L::relu(), L::maxpool(),
        L::conv(128), L::bn(), L::relu(), L::maxpool(), L::dropout(0.1f),
        L::conv(160), L::bn(), L::relu(), L::maxpool(), L::dropout(0.2f),
        L::conv(192), L::bn(), L::relu(), L::maxpool(), L::dropout(0.3f),
        L::conv(224), L::bn(), L::relu(), L::maxpool(), L::dropout(0.4f),
        L::conv(320), L::bn(), L::relu(), L::maxpool(), L::dropout(0.5f),
        L::conv(256), L::bn(), L::relu(), L::maxpool(),
        L::flatten(), L::dense(class_count), L::softmax(),
    };
    return def;
}

// Same layer pattern as w_leafnet adapted to a 96x96 patch input: six
// pooling stages bring the spatial extent to 1x1, so the seventh conv
// runs at 1x1 and the final pool is omitted.
NetworkDef build_p_fallback(int64_t class_count) {
    using L = LayerSpec;
    NetworkDef def;
    def.name = "p_fallback";
    def.input_dims = {3, 96, 96};
    def.class_count = class_count;
    def.layers = {
        L::conv(64),  L::bn(), L::relu(), L::maxpool(),
        L::conv(128), L::bn(), L::relu(), L::maxpool(), L::dropout(0.1f),
        L::conv(160), L::bn(), L::relu(), L::maxpool(), L::dropout(0.2f),
        L::conv(192), L::bn(), L::relu(), L::maxpool(), L::dropout(0.3f),
        L::conv(224), L::bn(), L::relu(), L::maxpool(), L::dropout(0.4f),
        L::conv(320), L::bn(), L::relu(), L::maxpool(), L::dropout(0.5f),
        L::conv(256), L::bn(), L::relu(),
        L::flatten(), L::dense(class_count), L::softmax(),
    };
    return def;
}

// Narrow variant of s_leafnet for desk-scale training runs and tests.
NetworkDef build_s_mini(int64_t class_count) {
    using L = LayerSpec;
    NetworkDef def;
    def.name = "s_mini";
    def.input_dims = {1, 32, 32};
    def.class_count = class_count;
    def.layers = {
        L::conv(8),  L::bn(), L::relu(), L::maxpool(),
        L::conv(16), L::bn(), L::relu(), L::maxpool(), L::dropout(0.1f),
        L::conv(24), L::bn(), L::relu(), L::maxpool(), L::dropout(0.2f),
        L::conv(32), L::bn(), L::relu(), L::maxpool(), L::dropout(0.3f),
        L::conv(32), L::bn(), L::relu(), L::avgpool(), L::dropout(0.4f),
        L::flatten(), L::dense(class_count), L::softmax(),
    };
    return def;
}

NetworkDef build_by_name(const std::string& name, int64_t class_count) {
    if (name == "s" || name == "s_leafnet") return build_s_leafnet(class_count);
    if (name == "w" || name == "w_leafnet") return build_w_leafnet(class_count);
    if (name == "p" || name == "p_fallback") return build_p_fallback(class_count);
    if (name == "s_mini") return build_s_mini(class_count);
    throw Error("unknown network '" + name + "' (expected s, w, p_fallback or s_mini)");
}

namespace {

struct ShapeWalk {
    int64_t c, h, w;
};

ShapeWalk step_shape(ShapeWalk s, const LayerSpec& layer, size_t index, bool validate) {
    switch (layer.kind) {
    case LayerKind::conv3x3:
        s.c = layer.units;
        break;
    case LayerKind::maxpool2:
    case LayerKind::avgpool2:
        if (validate && (s.h < 2 || s.w < 2))
            throw ShapeError("layer " + std::to_string(index) + " (" +
                             layer_kind_name(layer.kind) + "): spatial extent " +
                             std::to_string(s.h) + "x" + std::to_string(s.w) + " is below 2x2");
        s.h /= 2;
        s.w /= 2;
        break;
    case LayerKind::flatten:
        s = {s.c * s.h * s.w, 1, 1};
        break;
    case LayerKind::dense:
        s = {layer.units, 1, 1};
        break;
    case LayerKind::batchnorm:
    case LayerKind::relu:
    case LayerKind::dropout:
    case LayerKind::softmax:
        break;
    }
    return s;
}

} // namespace

ParamCount count_params(const NetworkDef& def) {
    ParamCount pc;
    ShapeWalk s{def.input_dims[0], def.input_dims[1], def.input_dims[2]};
    for (size_t i = 0; i < def.layers.size(); ++i) {
        const LayerSpec& layer = def.layers[i];
        switch (layer.kind) {
        case LayerKind::conv3x3:
            pc.trainable += 9 * s.c * layer.units + layer.units;
            break;
        case LayerKind::batchnorm:
            pc.trainable += 2 * s.c;
            pc.non_trainable += 2 * s.c;
            break;
        case LayerKind::dense:
            pc.trainable += s.c * s.h * s.w * layer.units + layer.units;
            break;
        default:
            break;
        }
        s = step_shape(s, layer, i, false);
    }
    pc.total = pc.trainable + pc.non_trainable;
    return pc;
}

std::vector<std::array<int64_t, 3>> trace_shapes(const NetworkDef& def) {
    std::vector<std::array<int64_t, 3>> out;
    ShapeWalk s{def.input_dims[0], def.input_dims[1], def.input_dims[2]};
    for (size_t i = 0; i < def.layers.size(); ++i) {
        s = step_shape(s, def.layers[i], i, true);
        out.push_back({s.c, s.h, s.w});
    }
    return out;
}

std::vector<int64_t> spatial_trace(const NetworkDef& def) {
    std::vector<int64_t> out{def.input_dims[1]};
    for (const auto& shape : trace_shapes(def))
        if (shape[1] != out.back())
            out.push_back(shape[1]);
    return out;
}

std::string weight_name(const NetworkDef& def, size_t layer_index, const char* param) {
    return def.name + "." + std::to_string(layer_index) + "." + param;
}

namespace {

bool name_ends_with(const std::string& name, const char* sfx) {
    const size_t n = std::strlen(sfx);
    return name.size() >= n && name.compare(name.size() - n, n, sfx) == 0;
}

} // namespace

bool is_trainable_param(const std::string& name) {
    if (name.find(".meta.") != std::string::npos)
        return false;
    return !name_ends_with(name, ".moving_mean") && !name_ends_with(name, ".moving_var");
}

bool is_l2_param(const std::string& name) {
    return name_ends_with(name, ".kernel") || name_ends_with(name, ".weight");
}

WeightMap alloc_params(const NetworkDef& def, float bn_epsilon, float bn_momentum) {
    WeightMap w;
    ShapeWalk s{def.input_dims[0], def.input_dims[1], def.input_dims[2]};
    for (size_t i = 0; i < def.layers.size(); ++i) {
        const LayerSpec& layer = def.layers[i];
        switch (layer.kind) {
        case LayerKind::conv3x3:
            w.add(weight_name(def, i, "kernel"), Tensor({layer.units, s.c, 3, 3}));
            w.add(weight_name(def, i, "bias"), Tensor({layer.units}));
            break;
        case LayerKind::batchnorm:
            w.add(weight_name(def, i, "gamma"), Tensor::full({s.c}, 1.0f));
            w.add(weight_name(def, i, "beta"), Tensor({s.c}));
            w.add(weight_name(def, i, "moving_mean"), Tensor({s.c}));
            w.add(weight_name(def, i, "moving_var"), Tensor::full({s.c}, 1.0f));
            break;
        case LayerKind::dense:
            w.add(weight_name(def, i, "weight"), Tensor({layer.units, s.c * s.h * s.w}));
            w.add(weight_name(def, i, "bias"), Tensor({layer.units}));
            break;
        default:
            break;
        }
        s = step_shape(s, layer, i, false);
    }
    w.add(def.name + ".meta.bn_epsilon", Tensor({1}, {bn_epsilon}));
    w.add(def.name + ".meta.bn_momentum", Tensor({1}, {bn_momentum}));
    return w;
}

namespace {

template <typename T>
const TensorT<T>& fetch(const WeightMapT<T>& w, const NetworkDef& def, size_t index,
                        const char* param) {
    const std::string name = weight_name(def, index, param);
    if (!w.contains(name))
        throw Error("forward: missing weight '" + name + "' for layer " +
                    std::to_string(index) + " (" + layer_kind_name(def.layers[index].kind) +
                    ")");
    return w.at(name);
}

template <typename T>
T meta_value(const WeightMapT<T>& w, const NetworkDef& def, const char* key, T fallback) {
    const std::string name = def.name + ".meta." + key;
    return w.contains(name) ? w.at(name)[0] : fallback;
}

template <typename T>
TensorT<T> run_graph(const NetworkDef& def, const WeightMapT<T>* frozen, WeightMapT<T>* live,
                     const TensorT<T>& input, bool train, std::mt19937* rng,
                     GraphActivations<T>* acts) {
    const WeightMapT<T>& weights = frozen ? *frozen : *live;
    if (input.rank() != 4 || input.dim(1) != def.input_dims[0] ||
        input.dim(2) != def.input_dims[1] || input.dim(3) != def.input_dims[2])
        throw ShapeError(def.name + ": input " + input.dims_str() + " does not match (N," +
                         std::to_string(def.input_dims[0]) + "," +
                         std::to_string(def.input_dims[1]) + "," +
                         std::to_string(def.input_dims[2]) + ")");
    const T eps = meta_value<T>(weights, def, "bn_epsilon", T(kDefaultBnEpsilon));
    const T momentum = meta_value<T>(weights, def, "bn_momentum", T(kDefaultBnMomentum));
    if (acts) {
        acts->outputs.clear();
        acts->outputs.reserve(def.layers.size());
        acts->dropout_masks.assign(def.layers.size(), TensorT<T>());
        acts->bn_mean.assign(def.layers.size(), TensorT<T>());
        acts->bn_var.assign(def.layers.size(), TensorT<T>());
    }

    TensorT<T> cur = input;
    for (size_t i = 0; i < def.layers.size(); ++i) {
        const LayerSpec& layer = def.layers[i];
        switch (layer.kind) {
        case LayerKind::conv3x3:
            cur = ops::conv2d_forward(cur, fetch(weights, def, i, "kernel"),
                                      fetch(weights, def, i, "bias"));
            break;
        case LayerKind::batchnorm: {
            const TensorT<T>& gamma = fetch(weights, def, i, "gamma");
            const TensorT<T>& beta = fetch(weights, def, i, "beta");
            TensorT<T>* mean_out = acts ? &acts->bn_mean[i] : nullptr;
            TensorT<T>* var_out = acts ? &acts->bn_var[i] : nullptr;
            if (train) {
                cur = ops::batchnorm_forward(cur, gamma, beta,
                                             live->at(weight_name(def, i, "moving_mean")),
                                             live->at(weight_name(def, i, "moving_var")), eps,
                                             momentum, true, mean_out, var_out);
            } else {
                // moving stats are read-only here; copies keep the op
                // signature uniform
                TensorT<T> mm = fetch(weights, def, i, "moving_mean");
                TensorT<T> mv = fetch(weights, def, i, "moving_var");
                cur = ops::batchnorm_forward(cur, gamma, beta, mm, mv, eps, momentum, false,
                                             mean_out, var_out);
            }
            break;
        }
        case LayerKind::relu:
            cur = ops::relu_forward(cur);
            break;
        case LayerKind::maxpool2:
            cur = ops::max_pool2_forward(cur);
            break;
        case LayerKind::avgpool2:
            cur = ops::avg_pool2_forward(cur);
            break;
        case LayerKind::dropout: {
            auto [out, mask] = ops::dropout_forward(cur, T(layer.rate), train, *rng);
            cur = std::move(out);
            if (acts)
                acts->dropout_masks[i] = std::move(mask);
            break;
        }
        case LayerKind::flatten:
            cur = cur.reshaped({cur.dim(0), cur.numel() / cur.dim(0)});
            break;
        case LayerKind::dense:
            cur = ops::dense_forward(cur, fetch(weights, def, i, "weight"),
                                     fetch(weights, def, i, "bias"));
            break;
        case LayerKind::softmax:
            cur = ops::softmax_forward(cur);
            break;
        }
        if (acts)
            acts->outputs.push_back(cur);
    }
    return cur;
}

std::mt19937 g_unused_rng; // infer mode never draws from it

} // namespace

template <typename T>
TensorT<T> graph_forward_infer(const NetworkDef& def, const WeightMapT<T>& weights,
                               const TensorT<T>& input, GraphActivations<T>* acts) {
    return run_graph<T>(def, &weights, nullptr, input, false, &g_unused_rng, acts);
}

template <typename T>
TensorT<T> graph_forward_train(const NetworkDef& def, WeightMapT<T>& weights,
                               const TensorT<T>& input, std::mt19937& rng,
                               GraphActivations<T>& acts) {
    return run_graph<T>(def, nullptr, &weights, input, true, &rng, &acts);
}

template <typename T>
WeightMapT<T> graph_backward(const NetworkDef& def, const WeightMapT<T>& weights,
                             const TensorT<T>& input, const GraphActivations<T>& acts,
                             const TensorT<T>& grad_out) {
    if (acts.outputs.size() != def.layers.size())
        throw Error("graph_backward: activations do not match the layer list");
    const T eps = meta_value<T>(weights, def, "bn_epsilon", T(kDefaultBnEpsilon));
    WeightMapT<T> grads;
    TensorT<T> g = grad_out;
    for (size_t ri = def.layers.size(); ri-- > 0;) {
        const LayerSpec& layer = def.layers[ri];
        const TensorT<T>& layer_in = ri == 0 ? input : acts.outputs[ri - 1];
        switch (layer.kind) {
        case LayerKind::softmax:
            g = ops::softmax_backward(acts.outputs[ri], g);
            break;
        case LayerKind::dense: {
            auto dg = ops::dense_backward(layer_in, fetch(weights, def, ri, "weight"), g);
            grads.add(weight_name(def, ri, "weight"), std::move(dg.weight));
            grads.add(weight_name(def, ri, "bias"), std::move(dg.bias));
            g = std::move(dg.input);
            break;
        }
        case LayerKind::flatten:
            g = g.reshaped(layer_in.dims());
            break;
        case LayerKind::dropout:
            if (acts.dropout_masks[ri].empty())
                throw Error("graph_backward: dropout mask missing for layer " +
                            std::to_string(ri));
            g = ops::dropout_backward(acts.dropout_masks[ri], g);
            break;
        case LayerKind::avgpool2:
            g = ops::avg_pool2_backward(layer_in, g);
            break;
        case LayerKind::maxpool2:
            g = ops::max_pool2_backward(layer_in, g);
            break;
        case LayerKind::relu:
            g = ops::relu_backward(layer_in, g);
            break;
        case LayerKind::batchnorm: {
            auto bg = ops::batchnorm_backward(layer_in, fetch(weights, def, ri, "gamma"),
                                              acts.bn_mean[ri], acts.bn_var[ri], eps, g);
            grads.add(weight_name(def, ri, "gamma"), std::move(bg.gamma));
            grads.add(weight_name(def, ri, "beta"), std::move(bg.beta));
            g = std::move(bg.input);
            break;
        }
        case LayerKind::conv3x3: {
            auto cg = ops::conv2d_backward(layer_in, fetch(weights, def, ri, "kernel"), g);
            grads.add(weight_name(def, ri, "kernel"), std::move(cg.kernel));
            grads.add(weight_name(def, ri, "bias"), std::move(cg.bias));
            g = std::move(cg.input);
            break;
        }
        }
    }
    return grads;
}

template TensorT<float> graph_forward_infer<float>(const NetworkDef&, const WeightMapT<float>&,
                                                   const TensorT<float>&,
                                                   GraphActivations<float>*);
template TensorT<double> graph_forward_infer<double>(const NetworkDef&,
                                                     const WeightMapT<double>&,
                                                     const TensorT<double>&,
                                                     GraphActivations<double>*);
template TensorT<float> graph_forward_train<float>(const NetworkDef&, WeightMapT<float>&,
                                                   const TensorT<float>&, std::mt19937&,
                                                   GraphActivations<float>&);
template TensorT<double> graph_forward_train<double>(const NetworkDef&, WeightMapT<double>&,
                                                     const TensorT<double>&, std::mt19937&,
                                                     GraphActivations<double>&);
template WeightMapT<float> graph_backward<float>(const NetworkDef&, const WeightMapT<float>&,
                                                 const TensorT<float>&,
                                                 const GraphActivations<float>&,
                                                 const TensorT<float>&);
template WeightMapT<double> graph_backward<double>(const NetworkDef&,
                                                   const WeightMapT<double>&,
                                                   const TensorT<double>&,
                                                   const GraphActivations<double>&,
                                                   const TensorT<double>&);

StageModel make_stage_model(NetworkDef def, WeightMap weights) {
    auto shared_def = std::make_shared<NetworkDef>(std::move(def));
    auto shared_w = std::make_shared<WeightMap>(std::move(weights));
    return [shared_def, shared_w](const Tensor& input) {
        Tensor probs = graph_forward_infer(*shared_def, *shared_w, input);
        return std::vector<float>(probs.data(), probs.data() + probs.numel());
    };
}

std::vector<std::string> export_feature_maps(const NetworkDef& def, const WeightMap& weights,
                                             const Tensor& input,
                                             const std::vector<size_t>& layer_indices,
                                             const std::string& out_dir) {
    for (size_t idx : layer_indices) {
        if (idx >= def.layers.size() || def.layers[idx].kind != LayerKind::conv3x3)
            throw Error("export_feature_maps: layer " + std::to_string(idx) +
                        " is not a conv layer");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw IoError("cannot create directory " + out_dir + ": " + ec.message());

    GraphActivations<float> acts;
    graph_forward_infer(def, weights, input, &acts);

    std::vector<std::string> written;
    char namebuf[64];
    for (size_t idx : layer_indices) {
        const Tensor& act = acts.outputs[idx];
        const int64_t ch = act.dim(1), h = act.dim(2), w = act.dim(3);
        std::vector<uint8_t> gray(static_cast<size_t>(h * w));
        for (int64_t c = 0; c < ch; ++c) {
            const float* plane = act.data() + c * h * w;
            float lo = plane[0], hi = plane[0];
            for (int64_t i = 1; i < h * w; ++i) {
                lo = std::min(lo, plane[i]);
                hi = std::max(hi, plane[i]);
            }
            if (hi > lo) {
                const float scale = 255.0f / (hi - lo);
                for (int64_t i = 0; i < h * w; ++i)
                    gray[static_cast<size_t>(i)] =
                        static_cast<uint8_t>(std::lround((plane[i] - lo) * scale));
            } else {
                std::fill(gray.begin(), gray.end(), uint8_t(128));
            }
            std::snprintf(namebuf, sizeof(namebuf), "%s_layer%02zu_ch%03lld.pgm",
                          def.name.c_str(), idx, static_cast<long long>(c));
            std::string path = (std::filesystem::path(out_dir) / namebuf).string();
            write_pgm(path, w, h, gray.data());
            written.push_back(std::move(path));
        }
    }
    return written;
}

} // namespace swp
