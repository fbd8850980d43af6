#include "swp/cascade.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

namespace swp {

bool is_valid_prob_vector(const ProbVector& p) {
    if (p.empty())
        return false;
    float total = 0.0f;
    for (float v : p) {
        if (v < -1e-6f || !std::isfinite(v))
            return false;
        total += v;
    }
    return std::fabs(total - 1.0f) <= 1e-5f;
}

CascadeConfig CascadeConfig::mk() {
    CascadeConfig c;
    c.min_prob_seg = 0.98f;
    c.min_delta_seg = 0.95f;
    c.top_seg = 10;
    c.min_mean_L1L2pred = 0.80f;
    c.min_prob_whole = 0.89f;
    c.min_delta_whole = 0.85f;
    c.top_whole = 6;
    c.patch_count = 7;
    c.min_mean_L1L3pred = 0.60f;
    c.min_mean_L2L3pred = 0.60f;
    c.min_prob_patch = 0.95f;
    c.min_delta_patch = 0.85f;
    c.vote_rate = 0.71f;
    c.vote_merge_rate = 0.56f;
    c.min_leaf_fraction = 1.0;
    return c;
}

CascadeConfig CascadeConfig::flavia() {
    CascadeConfig c;
    c.min_prob_seg = 0.95f;
    c.min_delta_seg = 0.91f;
    c.top_seg = 6;
    c.min_mean_L1L2pred = 0.70f;
    c.min_prob_whole = 0.78f;
    c.min_delta_whole = 0.60f;
    c.top_whole = 10;
    c.patch_count = 7;
    c.min_mean_L1L3pred = 0.60f;
    c.min_mean_L2L3pred = 0.60f;
    c.min_prob_patch = 0.95f;
    c.min_delta_patch = 0.85f;
    c.vote_rate = 0.71f;
    c.vote_merge_rate = 0.56f;
    c.min_leaf_fraction = 0.98;
    return c;
}

CascadeConfig CascadeConfig::preset(const std::string& name) {
    if (name == "mk")
        return mk();
    if (name == "flavia")
        return flavia();
    throw Error("unknown cascade preset '" + name + "' (expected mk or flavia)");
}

CascadeConfig load_cascade_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open cascade config " + path);
    CascadeConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
            line.pop_back();
        if (line.empty())
            continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw IoError("cascade config " + path + ":" + std::to_string(lineno) +
                          ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "min_prob_seg") cfg.min_prob_seg = std::stof(val);
        else if (key == "min_delta_seg") cfg.min_delta_seg = std::stof(val);
        else if (key == "top_seg") cfg.top_seg = std::stoll(val);
        else if (key == "min_mean_L1L2pred") cfg.min_mean_L1L2pred = std::stof(val);
        else if (key == "min_prob_whole") cfg.min_prob_whole = std::stof(val);
        else if (key == "min_delta_whole") cfg.min_delta_whole = std::stof(val);
        else if (key == "top_whole") cfg.top_whole = std::stoll(val);
        else if (key == "P") cfg.patch_count = std::stoll(val);
        else if (key == "min_mean_L1L3pred") cfg.min_mean_L1L3pred = std::stof(val);
        else if (key == "min_mean_L2L3pred") cfg.min_mean_L2L3pred = std::stof(val);
        else if (key == "min_prob_patch") cfg.min_prob_patch = std::stof(val);
        else if (key == "min_delta_patch") cfg.min_delta_patch = std::stof(val);
        else if (key == "vote_rate") cfg.vote_rate = std::stof(val);
        else if (key == "vote_merge_rate") cfg.vote_merge_rate = std::stof(val);
        else if (key == "min_leaf_fraction") cfg.min_leaf_fraction = std::stod(val);
        else if (key == "patch_seed") cfg.patch_seed = static_cast<uint32_t>(std::stoul(val));
        else if (key == "plausible_len") cfg.plausible_len = std::stoll(val);
        else if (key == "stage3_gate") {
            if (val == "union") cfg.stage3_gate = Stage3Gate::union_gate;
            else if (val == "intersection") cfg.stage3_gate = Stage3Gate::intersection_gate;
            else
                throw IoError("cascade config " + path + ":" + std::to_string(lineno) +
                              ": stage3_gate must be union or intersection");
        } else {
            throw IoError("cascade config " + path + ":" + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
        }
    }
    return cfg;
}

void save_cascade_config(const CascadeConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << "min_prob_seg=" << cfg.min_prob_seg << "\n"
        << "min_delta_seg=" << cfg.min_delta_seg << "\n"
        << "top_seg=" << cfg.top_seg << "\n"
        << "min_mean_L1L2pred=" << cfg.min_mean_L1L2pred << "\n"
        << "min_prob_whole=" << cfg.min_prob_whole << "\n"
        << "min_delta_whole=" << cfg.min_delta_whole << "\n"
        << "top_whole=" << cfg.top_whole << "\n"
        << "P=" << cfg.patch_count << "\n"
        << "min_mean_L1L3pred=" << cfg.min_mean_L1L3pred << "\n"
        << "min_mean_L2L3pred=" << cfg.min_mean_L2L3pred << "\n"
        << "min_prob_patch=" << cfg.min_prob_patch << "\n"
        << "min_delta_patch=" << cfg.min_delta_patch << "\n"
        << "vote_rate=" << cfg.vote_rate << "\n"
        << "vote_merge_rate=" << cfg.vote_merge_rate << "\n"
        << "min_leaf_fraction=" << cfg.min_leaf_fraction << "\n"
        << "patch_seed=" << cfg.patch_seed << "\n"
        << "stage3_gate="
        << (cfg.stage3_gate == Stage3Gate::union_gate ? "union" : "intersection") << "\n"
        << "plausible_len=" << cfg.plausible_len << "\n";
}

bool StageKnowledge::contains(int64_t class_id) const {
    for (const auto& [c, p] : entries)
        if (c == class_id)
            return true;
    return false;
}

float StageKnowledge::prob_of(int64_t class_id) const {
    for (const auto& [c, p] : entries)
        if (c == class_id)
            return p;
    return 0.0f;
}

StageKnowledge top_k(const ProbVector& p, int64_t k) {
    if (k < 1 || k > static_cast<int64_t>(p.size()))
        throw Error("top_k: k must be in [1, class_count]");
    std::vector<int64_t> order(p.size());
    for (size_t i = 0; i < p.size(); ++i)
        order[i] = static_cast<int64_t>(i);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (p[static_cast<size_t>(a)] != p[static_cast<size_t>(b)])
            return p[static_cast<size_t>(a)] > p[static_cast<size_t>(b)];
        return a < b;
    });
    StageKnowledge k1;
    k1.entries.reserve(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i)
        k1.entries.emplace_back(order[static_cast<size_t>(i)],
                                p[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    return k1;
}

int64_t argmax_class(const ProbVector& p) {
    int64_t best = 0;
    for (size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[static_cast<size_t>(best)])
            best = static_cast<int64_t>(i);
    return best;
}

namespace {

float second_best(const ProbVector& p, int64_t top) {
    float best = -1.0f;
    for (size_t i = 0; i < p.size(); ++i)
        if (static_cast<int64_t>(i) != top)
            best = std::max(best, p[i]);
    return best;
}

} // namespace

const char* rule_name(Rule r) {
    switch (r) {
    case Rule::min_prob_seg: return "min_prob_seg";
    case Rule::min_delta_seg: return "min_delta_seg";
    case Rule::min_mean_L1L2pred: return "min_mean_L1L2pred";
    case Rule::min_prob_whole: return "min_prob_whole";
    case Rule::min_delta_whole: return "min_delta_whole";
    case Rule::min_mean_L1L3pred: return "min_mean_L1L3pred";
    case Rule::min_mean_L2L3pred: return "min_mean_L2L3pred";
    case Rule::min_prob_patch: return "min_prob_patch";
    case Rule::min_delta_patch: return "min_delta_patch";
    }
    return "?";
}

const char* plausible_method_name(PlausibleMethod m) {
    switch (m) {
    case PlausibleMethod::patch_vote: return "patch_vote";
    case PlausibleMethod::merged_vote: return "merged_vote";
    case PlausibleMethod::ranked_fallback: return "ranked_fallback";
    }
    return "?";
}

StageDecision stage1_decide(const ProbVector& p1, const CascadeConfig& cfg) {
    const int64_t c1 = argmax_class(p1);
    const float top1 = p1[static_cast<size_t>(c1)];
    StageDecision d;
    if (top1 >= cfg.min_prob_seg) {
        d.decided = true;
        d.class_id = c1;
        d.rule = Rule::min_prob_seg;
        return d;
    }
    if (top1 - second_best(p1, c1) >= cfg.min_delta_seg) {
        d.decided = true;
        d.class_id = c1;
        d.rule = Rule::min_delta_seg;
        return d;
    }
    d.carry = top_k(p1, std::min<int64_t>(cfg.top_seg, static_cast<int64_t>(p1.size())));
    return d;
}

StageDecision stage2_decide(const ProbVector& p2, const StageKnowledge& k1,
                            const CascadeConfig& cfg) {
    if (k1.empty())
        throw Error("stage2_decide: empty stage-1 knowledge");
    const int64_t c2 = argmax_class(p2);
    const float top1 = p2[static_cast<size_t>(c2)];
    StageDecision d;
    if (k1.contains(c2)) {
        if (c2 == k1.top_class() &&
            (k1.prob_of(c2) + top1) / 2.0f >= cfg.min_mean_L1L2pred) {
            d.decided = true;
            d.class_id = c2;
            d.rule = Rule::min_mean_L1L2pred;
            return d;
        }
        if (top1 >= cfg.min_prob_whole) {
            d.decided = true;
            d.class_id = c2;
            d.rule = Rule::min_prob_whole;
            return d;
        }
        if (top1 - second_best(p2, c2) >= cfg.min_delta_whole) {
            d.decided = true;
            d.class_id = c2;
            d.rule = Rule::min_delta_whole;
            return d;
        }
    }
    d.carry = top_k(p2, std::min<int64_t>(cfg.top_whole, static_cast<int64_t>(p2.size())));
    return d;
}

ProbVector aggregate_patches(const std::vector<ProbVector>& patch_probs) {
    if (patch_probs.empty())
        throw Error("aggregate_patches: empty patch list");
    const size_t k = patch_probs.front().size();
    ProbVector mean(k, 0.0f);
    for (const ProbVector& p : patch_probs) {
        if (p.size() != k)
            throw ShapeError("aggregate_patches: inconsistent class counts");
        for (size_t i = 0; i < k; ++i)
            mean[i] += p[i];
    }
    const float inv = 1.0f / static_cast<float>(patch_probs.size());
    for (float& v : mean)
        v *= inv;
    return mean;
}

namespace {

float prob_at(const ProbVector& p, int64_t c) {
    return c >= 0 && c < static_cast<int64_t>(p.size()) ? p[static_cast<size_t>(c)] : 0.0f;
}

// Ranked plausible list ordered by (votes, score, lower id); the
// emitted score folds the vote count and the tie-break score together
// so the list is descending by construction.
std::vector<std::pair<int64_t, float>> rank_by_votes(const std::vector<int64_t>& votes,
                                                     const ProbVector& score, int64_t limit,
                                                     float denom) {
    std::vector<int64_t> order(score.size());
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = static_cast<int64_t>(i);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (votes[static_cast<size_t>(a)] != votes[static_cast<size_t>(b)])
            return votes[static_cast<size_t>(a)] > votes[static_cast<size_t>(b)];
        if (score[static_cast<size_t>(a)] != score[static_cast<size_t>(b)])
            return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<std::pair<int64_t, float>> ranked;
    const int64_t n = std::min<int64_t>(limit, static_cast<int64_t>(order.size()));
    ranked.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t c = order[static_cast<size_t>(i)];
        const float s = (static_cast<float>(votes[static_cast<size_t>(c)]) +
                         score[static_cast<size_t>(c)]) /
                        denom;
        ranked.emplace_back(c, s);
    }
    return ranked;
}

std::vector<std::pair<int64_t, float>> rank_by_score(const ProbVector& score, int64_t limit) {
    std::vector<int64_t> votes(score.size(), 0);
    return rank_by_votes(votes, score, limit, 1.0f);
}

} // namespace

CascadeOutcome stage3_decide(const ProbVector& p3, const std::vector<int64_t>& patch_preds,
                             const StageKnowledge& k1, const StageKnowledge& k2,
                             const CascadeConfig& cfg, const ProbVector& p1,
                             const ProbVector& p2) {
    CascadeOutcome out;
    out.p1 = p1;
    out.p2 = p2;
    out.p3 = p3;
    out.patches_used = patch_preds.size();

    const int64_t c3 = argmax_class(p3);
    const float top1 = p3[static_cast<size_t>(c3)];
    const bool gate = cfg.stage3_gate == Stage3Gate::union_gate
                          ? (k1.contains(c3) || k2.contains(c3))
                          : (k1.contains(c3) && k2.contains(c3));
    if (gate) {
        auto decided = [&](Rule rule) {
            out.kind = CascadeOutcome::Kind::decided;
            out.class_id = c3;
            out.stage = 3;
            out.rule = rule;
            return out;
        };
        if (c3 == argmax_class(p1) &&
            (prob_at(p1, c3) + top1) / 2.0f >= cfg.min_mean_L1L3pred)
            return decided(Rule::min_mean_L1L3pred);
        if (c3 == argmax_class(p2) &&
            (prob_at(p2, c3) + top1) / 2.0f >= cfg.min_mean_L2L3pred)
            return decided(Rule::min_mean_L2L3pred);
        if (top1 >= cfg.min_prob_patch)
            return decided(Rule::min_prob_patch);
        if (top1 - second_best(p3, c3) >= cfg.min_delta_patch)
            return decided(Rule::min_delta_patch);
    }

    out.kind = CascadeOutcome::Kind::plausible;
    const int64_t limit = cfg.plausible_length();

    // (a) initial voting over per-patch predictions
    if (!patch_preds.empty()) {
        std::vector<int64_t> votes(p3.size(), 0);
        for (int64_t c : patch_preds)
            ++votes[static_cast<size_t>(c)];
        auto ranked = rank_by_votes(votes, p3, limit,
                                    static_cast<float>(patch_preds.size()) + 1.0f);
        const int64_t modal = ranked.front().first;
        const float share = static_cast<float>(votes[static_cast<size_t>(modal)]) /
                            static_cast<float>(patch_preds.size());
        if (share >= cfg.vote_rate) {
            out.method = PlausibleMethod::patch_vote;
            out.ranked = std::move(ranked);
            return out;
        }
    }

    // (b) general voting over the three stage-level predictions, with
    // the stage-1/2 probability floor
    ProbVector mean3(p3.size(), 0.0f);
    for (size_t i = 0; i < p3.size(); ++i)
        mean3[i] = (prob_at(p1, static_cast<int64_t>(i)) + prob_at(p2, static_cast<int64_t>(i)) +
                    p3[i]) /
                   3.0f;
    {
        std::vector<int64_t> votes(p3.size(), 0);
        ++votes[static_cast<size_t>(argmax_class(p1))];
        ++votes[static_cast<size_t>(argmax_class(p2))];
        ++votes[static_cast<size_t>(c3)];
        auto ranked = rank_by_votes(votes, mean3, limit, 4.0f);
        const int64_t winner = ranked.front().first;
        const float share = static_cast<float>(votes[static_cast<size_t>(winner)]) / 3.0f;
        const float floor = std::min(cfg.min_prob_whole, cfg.min_prob_seg) / 2.0f;
        if (share >= cfg.vote_merge_rate &&
            std::min(prob_at(p1, winner), prob_at(p2, winner)) >= floor) {
            out.method = PlausibleMethod::merged_vote;
            out.ranked = std::move(ranked);
            return out;
        }
    }

    // (c) ranked fallback over the mean of the three stages
    out.method = PlausibleMethod::ranked_fallback;
    out.ranked = rank_by_score(mean3, limit);
    return out;
}

namespace {

ProbVector call_stage(const StageModel& model, const Tensor& input, int stage) {
    ProbVector p = model(input);
    if (!is_valid_prob_vector(p))
        throw Error("stage " + std::to_string(stage) + " model returned an invalid probability vector");
    return p;
}

Tensor as_batch(const Tensor& chw) {
    return chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)});
}

CascadeOutcome ranked_over_two(const ProbVector& p1, const ProbVector& p2,
                               const CascadeConfig& cfg) {
    CascadeOutcome out;
    out.kind = CascadeOutcome::Kind::plausible;
    out.method = PlausibleMethod::ranked_fallback;
    out.p1 = p1;
    out.p2 = p2;
    ProbVector mean(p1.size(), 0.0f);
    for (size_t i = 0; i < p1.size(); ++i)
        mean[i] = (p1[i] + p2[i]) / 2.0f;
    out.ranked = rank_by_score(mean, cfg.plausible_length());
    return out;
}

} // namespace

CascadeOutcome run_cascade(const LeafImage& leaf, const CascadeModels& models,
                           const CascadeConfig& cfg) {
    // stage 1: leaf silhouette
    const Tensor input1 = as_batch(resize_nearest(leaf.mask, 128, 128));
    const ProbVector p1 = call_stage(models.stage1, input1, 1);
    StageDecision d1 = stage1_decide(p1, cfg);
    if (d1.decided) {
        CascadeOutcome out;
        out.kind = CascadeOutcome::Kind::decided;
        out.class_id = d1.class_id;
        out.stage = 1;
        out.rule = d1.rule;
        out.p1 = p1;
        return out;
    }

    // stage 2: whole color image
    const Tensor input2 = as_batch(resize_bilinear(leaf.rgb, 196, 196));
    const ProbVector p2 = call_stage(models.stage2, input2, 2);
    StageDecision d2 = stage2_decide(p2, d1.carry, cfg);
    if (d2.decided) {
        CascadeOutcome out;
        out.kind = CascadeOutcome::Kind::decided;
        out.class_id = d2.class_id;
        out.stage = 2;
        out.rule = d2.rule;
        out.p1 = p1;
        out.p2 = p2;
        return out;
    }

    // stage 3: in-leaf patches
    PatchSet patches;
    try {
        patches = extract_patches(leaf, cfg.patch_count, 96, cfg.min_leaf_fraction,
                                  cfg.patch_seed);
    } catch (const PatchShortfall& shortfall) {
        patches = shortfall.found;
    }
    if (patches.patches.empty())
        return ranked_over_two(p1, p2, cfg);

    std::vector<ProbVector> patch_probs;
    std::vector<int64_t> patch_preds;
    patch_probs.reserve(patches.patches.size());
    try {
        for (const Tensor& patch : patches.patches) {
            patch_probs.push_back(call_stage(models.stage3, as_batch(patch), 3));
            patch_preds.push_back(argmax_class(patch_probs.back()));
        }
    } catch (const StageUnavailable&) {
        return ranked_over_two(p1, p2, cfg);
    }

    const ProbVector p3 = aggregate_patches(patch_probs);
    return stage3_decide(p3, patch_preds, d1.carry, d2.carry, cfg, p1, p2);
}

double EvalReport::stage_accuracy(int stage) const {
    const int64_t p = processed[static_cast<size_t>(stage - 1)];
    return p == 0 ? 0.0
                  : static_cast<double>(correct[static_cast<size_t>(stage - 1)]) /
                        static_cast<double>(p);
}

double EvalReport::overall_accuracy() const {
    if (total == 0)
        return 0.0;
    int64_t right = 0;
    for (int64_t c : correct)
        right += c;
    return static_cast<double>(right) / static_cast<double>(total);
}

double EvalReport::plausible_coverage() const {
    return undecided == 0 ? 0.0
                          : static_cast<double>(plausible_hits) / static_cast<double>(undecided);
}

double overall_accuracy_from_counts(const std::vector<double>& stage_correct, double total) {
    double right = 0.0;
    for (double c : stage_correct)
        right += c;
    return right / total;
}

EvalReport evaluate(const std::vector<EvalSample>& samples, const CascadeModels& models,
                    const CascadeConfig& cfg, int jobs) {
    if (samples.empty())
        throw Error("evaluate: empty sample list");
    EvalReport report;
    report.total = static_cast<int64_t>(samples.size());
    report.outcomes.resize(samples.size());

    if (jobs < 2) {
        for (size_t i = 0; i < samples.size(); ++i)
            report.outcomes[i] = run_cascade(samples[i].image, models, cfg);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (size_t i = next.fetch_add(1); i < samples.size(); i = next.fetch_add(1))
                report.outcomes[i] = run_cascade(samples[i].image, models, cfg);
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back(worker);
        for (std::thread& t : pool)
            t.join();
    }

    for (size_t i = 0; i < samples.size(); ++i) {
        const CascadeOutcome& out = report.outcomes[i];
        const int64_t truth = samples[i].label;
        if (out.kind == CascadeOutcome::Kind::decided) {
            ++report.processed[static_cast<size_t>(out.stage - 1)];
            if (out.class_id == truth)
                ++report.correct[static_cast<size_t>(out.stage - 1)];
        } else {
            ++report.undecided;
            for (const auto& [c, s] : out.ranked)
                if (c == truth) {
                    ++report.plausible_hits;
                    break;
                }
        }
    }
    return report;
}

} // namespace swp
