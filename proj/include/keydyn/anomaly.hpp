#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "keydyn/clustering.hpp"
#include "keydyn/session.hpp"

namespace keydyn {

enum class OutlierDegree { Normal = 0, FirstDegree = 1, SecondDegree = 2 };

std::string_view to_string(OutlierDegree d) noexcept;

struct Thresholds {
    double t1 = 0.0;  // context-cluster radius
    double t2 = 0.0;

    bool operator==(const Thresholds&) const = default;
};

enum class ThresholdMode { RadiusFactor, MeanThreeSigma };

std::string_view to_string(ThresholdMode m) noexcept;
ThresholdMode parse_threshold_mode(std::string_view text);

struct AnomalyConfig {
    std::size_t min_history = 10;
    double radius_factor = 2.0;
    double epsilon_floor = 1e-6;
    ThresholdMode threshold_mode = ThresholdMode::RadiusFactor;
    /// Upper end of the elbow sweep is min(k_cap, floor(points / 2)).
    std::size_t k_cap = 10;
    ElbowOptions elbow{};
};

struct GlobalCheckResult {
    bool pass = false;
    std::size_t attempt_index = 0;  // row of the attempt in the re-clustered set
    ClusterModel model;
    ElbowReport elbow;
};

/// Re-clusters history plus the attempt (attempt appended as the last row)
/// with k chosen by the elbow sweep over the union. Fails when the attempt
/// ends up alone in its cluster.
GlobalCheckResult global_check(const PointSet& history, std::span<const double> attempt, std::uint64_t seed,
                               const AnomalyConfig& config = {});

struct ContextResult {
    std::size_t cluster = 0;
    std::size_t member_count = 0;  // historical members only
    std::vector<double> centroid;  // mean of the historical members
    std::vector<double> member_distances;  // ascending, de-duplicated
    double attempt_distance = 0.0;
};

ContextResult contextualize(const ClusterModel& model, const PointSet& history, std::span<const double> attempt);

/// Sorts and removes repeated distance values.
std::vector<double> dedup_distances(std::vector<double> distances);

Thresholds compute_thresholds(std::span<const double> member_distances, const AnomalyConfig& config = {});

/// d <= t1 is normal, t1 < d < t2 first degree, d >= t2 second degree.
OutlierDegree local_check(double distance, const Thresholds& th) noexcept;

struct RiskAssessment {
    bool global_pass = false;
    std::optional<std::size_t> context_cluster;
    double distance = 0.0;
    std::optional<Thresholds> thresholds;
    OutlierDegree degree = OutlierDegree::SecondDegree;
    std::size_t recluster_k = 0;
    nlohmann::json explain = nlohmann::json::array();
};

RiskAssessment assess(const PointSet& history, std::span<const double> attempt, std::uint64_t seed,
                      const AnomalyConfig& config = {});

/// `include_explain` controls whether the stage log is attached.
nlohmann::json to_json(const RiskAssessment& a, bool include_explain = true);

/// Feature space an attempt is judged in: the profile ranges widened by the
/// attempt itself, applied to both history and attempt. Values outside the
/// training ranges therefore stretch the space instead of being clamped.
struct AssessmentSpace {
    NormalizationRanges ranges;
    PointSet history;
    std::vector<double> attempt;
};

AssessmentSpace make_assessment_space(const std::vector<std::vector<double>>& raw_history,
                                      const NormalizationRanges& ranges, std::span<const double> raw_attempt);

}  // namespace keydyn
