#pragma once

#include <array>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "swp/ops.hpp"
#include "swp/tensor.hpp"

namespace swp {

enum class LayerKind {
    conv3x3,
    batchnorm,
    relu,
    maxpool2,
    avgpool2,
    dropout,
    flatten,
    dense,
    softmax,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
    LayerKind kind;
    int64_t units = 0; // conv output channels / dense units
    float rate = 0.0f; // dropout rate

    static LayerSpec conv(int64_t out_channels) { return {LayerKind::conv3x3, out_channels}; }
    static LayerSpec bn() { return {LayerKind::batchnorm}; }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec maxpool() { return {LayerKind::maxpool2}; }
    static LayerSpec avgpool() { return {LayerKind::avgpool2}; }
    static LayerSpec dropout(float rate) { return {LayerKind::dropout, 0, rate}; }
    static LayerSpec flatten() { return {LayerKind::flatten}; }
    static LayerSpec dense(int64_t units) { return {LayerKind::dense, units}; }
    static LayerSpec softmax() { return {LayerKind::softmax}; }
};

/// Sequential layer graph. Conv layers declare output channels only;
/// input channels are inferred during shape propagation.
struct NetworkDef {
    std::string name;
    std::array<int64_t, 3> input_dims{}; // C, H, W
    std::vector<LayerSpec> layers;
    int64_t class_count = 0;
};

// The two from-scratch architectures, a stand-in for the third stage so
// the cascade runs end to end without an external network, and a
// narrow desk-scale variant of the first architecture used by the
// training tests.
NetworkDef build_s_leafnet(int64_t class_count);
NetworkDef build_w_leafnet(int64_t class_count);
NetworkDef build_p_fallback(int64_t class_count);
NetworkDef build_s_mini(int64_t class_count);

NetworkDef build_by_name(const std::string& name, int64_t class_count);

struct ParamCount {
    int64_t total = 0;
    int64_t trainable = 0;
    int64_t non_trainable = 0;
};

/// conv: 9*in*out + out; batchnorm: 4 per channel of which 2 frozen;
/// dense: in*units + units; everything else parameter-free.
ParamCount count_params(const NetworkDef& def);

/// Output extents (C,H,W) after each layer. Throws ShapeError if a
/// layer would see an input it cannot handle.
std::vector<std::array<int64_t, 3>> trace_shapes(const NetworkDef& def);

/// The distinct spatial extents visited, in order (e.g. 196,98,...,1).
std::vector<int64_t> spatial_trace(const NetworkDef& def);

// ---- weights ---------------------------------------------------------

/// Name -> tensor container that preserves insertion order so archives
/// serialize canonically (layer-index order).
template <typename T>
class WeightMapT {
public:
    void add(std::string name, TensorT<T> t) {
        if (index_.count(name))
            throw Error("duplicate weight entry '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(t));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw Error("missing weight entry '" + name + "'");
        return entries_[it->second].second;
    }

    const TensorT<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw Error("missing weight entry '" + name + "'");
        return entries_[it->second].second;
    }

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const std::vector<std::pair<std::string, TensorT<T>>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, TensorT<T>>>& entries() { return entries_; }

private:
    std::vector<std::pair<std::string, TensorT<T>>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

using WeightMap = WeightMapT<float>;

inline constexpr float kDefaultBnEpsilon = 1e-3f;
inline constexpr float kDefaultBnMomentum = 0.99f;

std::string weight_name(const NetworkDef& def, size_t layer_index, const char* param);

/// Moving statistics and the meta entries are frozen; everything else
/// is trainable.
bool is_trainable_param(const std::string& name);

/// L2 regularization applies to conv kernels and dense weights only.
bool is_l2_param(const std::string& name);

/// Allocates every parameter tensor for `def` in definition order:
/// weights and biases zeroed, gamma 1, beta 0, moving stats (0, 1).
/// Also records the batchnorm epsilon/momentum as meta entries so
/// inference from an archive is reproducible.
WeightMap alloc_params(const NetworkDef& def, float bn_epsilon = kDefaultBnEpsilon,
                       float bn_momentum = kDefaultBnMomentum);

template <typename T>
WeightMapT<double> to_double(const WeightMapT<T>& w) {
    WeightMapT<double> out;
    for (const auto& [name, t] : w.entries())
        out.add(name, tensor_cast<double>(t));
    return out;
}

// ---- graph evaluation --------------------------------------------------

template <typename T>
struct GraphActivations {
    // outputs[i] is layer i's output; inputs to layer i are
    // outputs[i-1] (or the network input for i == 0)
    std::vector<TensorT<T>> outputs;
    std::vector<TensorT<T>> dropout_masks;
    std::vector<TensorT<T>> bn_mean;
    std::vector<TensorT<T>> bn_var;
};

/// Inference pass: dropout is the identity, batchnorm applies the
/// stored moving statistics. Returns class probabilities (N, classes).
/// `acts`, when given, receives every intermediate activation.
template <typename T>
TensorT<T> graph_forward_infer(const NetworkDef& def, const WeightMapT<T>& weights,
                               const TensorT<T>& input, GraphActivations<T>* acts = nullptr);

/// Training pass: live dropout, batch statistics, moving statistics
/// updated in place.
template <typename T>
TensorT<T> graph_forward_train(const NetworkDef& def, WeightMapT<T>& weights,
                               const TensorT<T>& input, std::mt19937& rng,
                               GraphActivations<T>& acts);

/// Backpropagates grad_out (gradient wrt the network output) through
/// the recorded activations; returns gradients for every trainable
/// parameter, keyed like the weights.
template <typename T>
WeightMapT<T> graph_backward(const NetworkDef& def, const WeightMapT<T>& weights,
                             const TensorT<T>& input, const GraphActivations<T>& acts,
                             const TensorT<T>& grad_out);

// ---- stage models ------------------------------------------------------

/// Anything that maps an input tensor (1,C,H,W) to class probabilities.
using StageModel = std::function<std::vector<float>(const Tensor&)>;

/// In-process stage model over a definition and loaded weights.
StageModel make_stage_model(NetworkDef def, WeightMap weights);

// ---- feature-map export --------------------------------------------------

/// Runs `input` (1,C,H,W) through the network and writes each channel
/// of the selected conv-layer activations as an 8-bit grayscale PGM,
/// min-max normalized per channel (constant channels map to mid-gray).
/// Returns the written paths.
std::vector<std::string> export_feature_maps(const NetworkDef& def, const WeightMap& weights,
                                             const Tensor& input,
                                             const std::vector<size_t>& layer_indices,
                                             const std::string& out_dir);

} // namespace swp
