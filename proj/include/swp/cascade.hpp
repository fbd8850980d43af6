#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "swp/netdef.hpp"
#include "swp/preprocess.hpp"

namespace swp {

using ProbVector = std::vector<float>;

/// Entries nonnegative, summing to 1 within 1e-5.
bool is_valid_prob_vector(const ProbVector& p);

enum class Stage3Gate { union_gate, intersection_gate };

/// Every termination/transfer parameter of the three-stage pipeline,
/// plus the patch-extraction knobs. Serialized as key=value text under
/// the same names.
struct CascadeConfig {
    float min_prob_seg = 0.98f;
    float min_delta_seg = 0.95f;
    int64_t top_seg = 10;
    float min_mean_L1L2pred = 0.80f;
    float min_prob_whole = 0.89f;
    float min_delta_whole = 0.85f;
    int64_t top_whole = 6;
    int64_t patch_count = 7; // "P"
    float min_mean_L1L3pred = 0.60f;
    float min_mean_L2L3pred = 0.60f;
    float min_prob_patch = 0.95f;
    float min_delta_patch = 0.85f;
    float vote_rate = 0.71f;
    float vote_merge_rate = 0.56f;

    double min_leaf_fraction = 1.0;
    uint32_t patch_seed = 0;
    Stage3Gate stage3_gate = Stage3Gate::union_gate;
    int64_t plausible_len = 0; // 0 -> max(top_seg, top_whole)

    int64_t plausible_length() const {
        return plausible_len > 0 ? plausible_len : std::max(top_seg, top_whole);
    }

    static CascadeConfig mk();
    static CascadeConfig flavia();
    static CascadeConfig preset(const std::string& name);
};

CascadeConfig load_cascade_config(const std::string& path);
void save_cascade_config(const CascadeConfig& cfg, const std::string& path);

/// Ranked candidate classes an undecided stage forwards to later ones.
struct StageKnowledge {
    std::vector<std::pair<int64_t, float>> entries; // descending probability

    bool contains(int64_t class_id) const;
    float prob_of(int64_t class_id) const; // 0 when absent
    int64_t top_class() const { return entries.front().first; }
    bool empty() const { return entries.empty(); }
};

/// k highest-probability classes, descending; ties broken toward the
/// lower class id.
StageKnowledge top_k(const ProbVector& p, int64_t k);

int64_t argmax_class(const ProbVector& p);

enum class Rule {
    min_prob_seg,
    min_delta_seg,
    min_mean_L1L2pred,
    min_prob_whole,
    min_delta_whole,
    min_mean_L1L3pred,
    min_mean_L2L3pred,
    min_prob_patch,
    min_delta_patch,
};
const char* rule_name(Rule r);

enum class PlausibleMethod { patch_vote, merged_vote, ranked_fallback };
const char* plausible_method_name(PlausibleMethod m);

struct StageDecision {
    bool decided = false;
    int64_t class_id = -1;       // when decided
    Rule rule = Rule::min_prob_seg;
    StageKnowledge carry;        // when deferred
};

/// Terminate when the top probability or the top-1/top-2 margin clears
/// its threshold; otherwise defer carrying the top_seg candidates.
StageDecision stage1_decide(const ProbVector& p1, const CascadeConfig& cfg);

/// Terminates only when the stage-2 winner appears among the carried
/// stage-1 candidates and one of the three confidence rules fires.
StageDecision stage2_decide(const ProbVector& p2, const StageKnowledge& k1,
                            const CascadeConfig& cfg);

/// Elementwise mean of per-patch probability vectors.
ProbVector aggregate_patches(const std::vector<ProbVector>& patch_probs);

/// Final verdict: either a decided class with the stage and rule that
/// fired, or a ranked list of plausible classes with the method that
/// produced it. Carries the per-stage probability trace for auditing.
struct CascadeOutcome {
    enum class Kind { decided, plausible };
    Kind kind = Kind::plausible;

    // decided
    int64_t class_id = -1;
    int stage = 0;
    Rule rule = Rule::min_prob_seg;

    // plausible
    PlausibleMethod method = PlausibleMethod::ranked_fallback;
    std::vector<std::pair<int64_t, float>> ranked; // descending score

    // audit trace (empty vectors for stages never invoked)
    ProbVector p1, p2, p3;
    size_t patches_used = 0;

    int64_t best_class() const {
        return kind == Kind::decided ? class_id : ranked.front().first;
    }
};

CascadeOutcome stage3_decide(const ProbVector& p3, const std::vector<int64_t>& patch_preds,
                             const StageKnowledge& k1, const StageKnowledge& k2,
                             const CascadeConfig& cfg, const ProbVector& p1,
                             const ProbVector& p2);

struct CascadeModels {
    StageModel stage1; // binarized 1x128x128
    StageModel stage2; // rgb 3x196x196
    StageModel stage3; // per-patch rgb 3x96x96
    int64_t class_count = 0;
};

/// Runs the full pipeline on one image. Later stage models are invoked
/// only when the earlier stage defers; a stage-3 model outage or a
/// patch shortfall degrades to the ranked fallback over the available
/// stages.
CascadeOutcome run_cascade(const LeafImage& leaf, const CascadeModels& models,
                           const CascadeConfig& cfg);

struct EvalSample {
    LeafImage image;
    int64_t label;
};

struct EvalReport {
    int64_t total = 0;
    std::array<int64_t, 3> processed{}; // decided at stage k+1
    std::array<int64_t, 3> correct{};
    int64_t undecided = 0;
    int64_t plausible_hits = 0; // true class present in the ranked list
    std::vector<CascadeOutcome> outcomes; // one per sample, input order

    double stage_accuracy(int stage) const; // among samples that stage decided
    double overall_accuracy() const;
    double plausible_coverage() const;
};

/// Σ per-stage correct / total. Exposed separately so per-stage counts
/// (including fractional averages) can be checked against the overall
/// figure.
double overall_accuracy_from_counts(const std::vector<double>& stage_correct, double total);

EvalReport evaluate(const std::vector<EvalSample>& samples, const CascadeModels& models,
                    const CascadeConfig& cfg, int jobs = 1);

} // namespace swp
