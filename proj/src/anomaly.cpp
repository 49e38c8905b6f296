#include "keydyn/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "keydyn/error.hpp"

namespace keydyn {

using nlohmann::json;

std::string_view to_string(OutlierDegree d) noexcept {
    switch (d) {
        case OutlierDegree::Normal: return "normal";
        case OutlierDegree::FirstDegree: return "first_degree";
        case OutlierDegree::SecondDegree: return "second_degree";
    }
    return "?";
}

std::string_view to_string(ThresholdMode m) noexcept {
    return m == ThresholdMode::RadiusFactor ? "radius-factor" : "mean-3sigma";
}

ThresholdMode parse_threshold_mode(std::string_view text) {
    if (text == "radius-factor") return ThresholdMode::RadiusFactor;
    if (text == "mean-3sigma") return ThresholdMode::MeanThreeSigma;
    throw Error(ErrorCode::InvalidArgument, "unknown threshold mode '" + std::string(text) + "'");
}

GlobalCheckResult global_check(const PointSet& history, std::span<const double> attempt, std::uint64_t seed,
                               const AnomalyConfig& config) {
    if (history.size() < config.min_history || history.empty()) {
        throw Error(ErrorCode::ProfileNotTrained, "profile not trained: " + std::to_string(history.size()) +
                                                      " historical attempts, need " +
                                                      std::to_string(std::max<std::size_t>(config.min_history, 1)));
    }
    if (attempt.size() != history.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "attempt has " + std::to_string(attempt.size()) +
                                                      " dimensions, history has " + std::to_string(history.dim()));
    }
    PointSet all = history;
    all.push_back(attempt);

    const std::size_t k_max = std::max<std::size_t>(1, std::min(config.k_cap, all.size() / 2));
    GlobalCheckResult result;
    result.attempt_index = all.size() - 1;
    result.elbow = choose_k_elbow(all, 1, k_max, seed, config.elbow);
    result.model = result.elbow.chosen_model();

    const std::size_t attempt_cluster = result.model.assignments[result.attempt_index];
    const auto sizes = result.model.cluster_sizes();
    result.pass = sizes[attempt_cluster] > 1;
    return result;
}

std::vector<double> dedup_distances(std::vector<double> distances) {
    std::sort(distances.begin(), distances.end());
    // Values closer than this are the same distance reached by different
    // floating-point paths.
    constexpr double kSame = 1e-12;
    auto last = std::unique(distances.begin(), distances.end(),
                            [](double a, double b) { return std::abs(a - b) <= kSame; });
    distances.erase(last, distances.end());
    return distances;
}

ContextResult contextualize(const ClusterModel& model, const PointSet& history, std::span<const double> attempt) {
    ContextResult ctx;
    ctx.cluster = nearest_centroid(model.centroids, attempt).index;

    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < history.size() && i < model.assignments.size(); ++i) {
        if (model.assignments[i] == ctx.cluster) members.push_back(i);
    }
    ctx.member_count = members.size();
    if (members.empty()) {
        ctx.centroid.assign(model.centroids[ctx.cluster].begin(), model.centroids[ctx.cluster].end());
        ctx.attempt_distance = euclidean(ctx.centroid, attempt);
        return ctx;
    }

    ctx.centroid.assign(history.dim(), 0.0);
    for (std::size_t i : members) {
        auto p = history[i];
        for (std::size_t d = 0; d < p.size(); ++d) ctx.centroid[d] += p[d];
    }
    for (double& v : ctx.centroid) v /= static_cast<double>(members.size());

    std::vector<double> dist;
    dist.reserve(members.size());
    for (std::size_t i : members) dist.push_back(euclidean(history[i], ctx.centroid));
    ctx.member_distances = dedup_distances(std::move(dist));
    ctx.attempt_distance = euclidean(attempt, ctx.centroid);
    return ctx;
}

Thresholds compute_thresholds(std::span<const double> member_distances, const AnomalyConfig& config) {
    if (member_distances.empty()) {
        throw Error(ErrorCode::InvalidArgument, "compute_thresholds: no member distances");
    }
    double t1 = 0.0;
    if (config.threshold_mode == ThresholdMode::RadiusFactor) {
        t1 = *std::max_element(member_distances.begin(), member_distances.end());
    } else {
        const double n = static_cast<double>(member_distances.size());
        const double mean = std::accumulate(member_distances.begin(), member_distances.end(), 0.0) / n;
        double var = 0.0;
        for (double d : member_distances) var += (d - mean) * (d - mean);
        t1 = mean + 3.0 * std::sqrt(var / n);
    }
    if (t1 <= 0.0) t1 = config.epsilon_floor;
    return {t1, config.radius_factor * t1};
}

OutlierDegree local_check(double distance, const Thresholds& th) noexcept {
    if (distance <= th.t1) return OutlierDegree::Normal;
    if (distance < th.t2) return OutlierDegree::FirstDegree;
    return OutlierDegree::SecondDegree;
}

RiskAssessment assess(const PointSet& history, std::span<const double> attempt, std::uint64_t seed,
                      const AnomalyConfig& config) {
    RiskAssessment ra;
    GlobalCheckResult global = global_check(history, attempt, seed, config);
    ra.recluster_k = global.model.k;
    ra.global_pass = global.pass;

    json curve = json::array();
    for (const ElbowPoint& p : global.elbow.curve) curve.push_back({{"k", p.k}, {"wcss", p.wcss}});
    ra.explain.push_back({{"stage", "global"},
                          {"k", global.model.k},
                          {"elbow", std::move(curve)},
                          {"attempt_cluster", global.model.assignments[global.attempt_index]},
                          {"attempt_cluster_size", global.model.cluster_sizes()[global.model.assignments[global.attempt_index]]},
                          {"pass", global.pass}});
    if (!global.pass) {
        ra.degree = OutlierDegree::SecondDegree;
        // Distance to the closest cluster that holds history.
        const std::size_t own = global.model.assignments[global.attempt_index];
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < global.model.k; ++c) {
            if (c != own) nearest = std::min(nearest, euclidean(global.model.centroids[c], attempt));
        }
        ra.distance = nearest;
        ra.explain.push_back({{"stage", "decision"}, {"degree", to_string(ra.degree)}, {"reason", "singleton cluster"}});
        return ra;
    }

    ContextResult ctx = contextualize(global.model, history, attempt);
    ra.context_cluster = ctx.cluster;
    ra.distance = ctx.attempt_distance;
    ra.explain.push_back({{"stage", "context"},
                          {"cluster", ctx.cluster},
                          {"members", ctx.member_count},
                          {"member_distances", ctx.member_distances},
                          {"attempt_distance", ctx.attempt_distance}});
    if (ctx.member_count == 0) {
        ra.degree = OutlierDegree::SecondDegree;
        ra.explain.push_back(
            {{"stage", "decision"}, {"degree", to_string(ra.degree)}, {"reason", "context cluster has no history"}});
        return ra;
    }

    const Thresholds th = compute_thresholds(ctx.member_distances, config);
    ra.thresholds = th;
    ra.degree = local_check(ctx.attempt_distance, th);
    ra.explain.push_back({{"stage", "local"},
                          {"mode", to_string(config.threshold_mode)},
                          {"t1", th.t1},
                          {"t2", th.t2},
                          {"degree", to_string(ra.degree)}});
    ra.explain.push_back({{"stage", "decision"}, {"degree", to_string(ra.degree)}});
    return ra;
}

json to_json(const RiskAssessment& a, bool include_explain) {
    json j = {{"global_pass", a.global_pass},
              {"degree", to_string(a.degree)},
              {"distance", a.distance},
              {"recluster_k", a.recluster_k}};
    if (a.context_cluster) j["context_cluster"] = *a.context_cluster;
    if (a.thresholds) j["thresholds"] = {{"t1", a.thresholds->t1}, {"t2", a.thresholds->t2}};
    if (include_explain) j["explain"] = a.explain;
    return j;
}

AssessmentSpace make_assessment_space(const std::vector<std::vector<double>>& raw_history,
                                      const NormalizationRanges& ranges, std::span<const double> raw_attempt) {
    AssessmentSpace space;
    space.ranges = update_ranges(ranges, raw_attempt);
    space.history = PointSet(raw_attempt.size());
    for (const auto& row : raw_history) space.history.push_back(normalize(row, space.ranges));
    space.attempt = normalize(raw_attempt, space.ranges);
    return space;
}

}  // namespace keydyn
