#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace keydyn {

/// Dense row-major set of equal-dimension points.
class PointSet {
public:
    PointSet() = default;
    explicit PointSet(std::size_t dim) : dim_(dim) {}
    PointSet(std::size_t count, std::size_t dim) : dim_(dim), data_(count * dim, 0.0) {}

    static PointSet from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t size() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return size() == 0; }

    std::span<const double> operator[](std::size_t i) const noexcept {
        return {data_.data() + i * dim_, dim_};
    }
    std::span<double> operator[](std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }

    void push_back(std::span<const double> row);
    std::vector<std::vector<double>> rows() const;

    bool operator==(const PointSet&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

double squared_distance(std::span<const double> a, std::span<const double> b);
double euclidean(std::span<const double> a, std::span<const double> b);

struct ClusterModel {
    std::size_t k = 0;
    PointSet centroids;
    std::vector<std::size_t> assignments;
    double wcss = 0.0;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    /// Objective after every centroid update, in iteration order.
    std::vector<double> wcss_trace;

    std::vector<std::size_t> cluster_sizes() const;
};

double wcss(const PointSet& centroids, const PointSet& points, std::span<const std::size_t> assignments);

inline constexpr std::size_t kDefaultMaxIter = 100;
inline constexpr std::size_t kDefaultRestarts = 32;

enum class Execution { Serial, Parallel };

/// One Lloyd run from seeded k-means++ initialization.
ClusterModel kmeans(const PointSet& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = kDefaultMaxIter);

/// Lloyd iteration from caller-supplied initial centroids.
ClusterModel lloyd(const PointSet& points, PointSet centroids, std::size_t max_iter = kDefaultMaxIter);

/// Best-WCSS model over `restarts` seeded runs. Restarts run concurrently
/// under Execution::Parallel; the reduction is ordered by restart index, so
/// both execution modes return identical models.
ClusterModel kmeans_best_of(const PointSet& points, std::size_t k, std::uint64_t seed,
                            std::size_t restarts = kDefaultRestarts, std::size_t max_iter = kDefaultMaxIter,
                            Execution exec = Execution::Parallel);

std::uint64_t restart_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

struct ElbowPoint {
    std::size_t k = 0;
    double wcss = 0.0;
    std::optional<double> second_difference;  // interior k only
};

struct ElbowReport {
    std::size_t k_min = 0;
    std::size_t k_max = 0;
    std::size_t chosen_k = 0;
    std::vector<ElbowPoint> curve;
    std::vector<ClusterModel> models;  // best model per k, aligned with curve

    const ClusterModel& chosen_model() const { return models.at(chosen_k - k_min); }
};

struct ElbowOptions {
    std::size_t restarts = kDefaultRestarts;
    std::size_t max_iter = kDefaultMaxIter;
    Execution exec = Execution::Parallel;
};

/// Sweeps k over [k_min, k_max] and picks the k with the largest discrete
/// second difference of the WCSS curve. Flat curves and ranges with fewer
/// than three candidates resolve to k_min.
ElbowReport choose_k_elbow(const PointSet& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                           const ElbowOptions& options = {});

struct NearestCentroid {
    std::size_t index = 0;
    double distance = 0.0;
};

/// Ties resolve to the lowest centroid index.
NearestCentroid nearest_centroid(const PointSet& centroids, std::span<const double> point);

}  // namespace keydyn
