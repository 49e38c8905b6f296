#include "keydyn/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <omp.h>

#include "keydyn/error.hpp"

namespace keydyn {

namespace {

double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n)));
}

void check_dims(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "point dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

std::size_t nearest_index(const PointSet& centroids, std::span<const double> p) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(centroids[c], p);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

// A point only moves to a strictly closer centroid; on ties it stays put, so
// a cluster reseeded onto a duplicate point keeps that point.
bool assign(const PointSet& points, const PointSet& centroids, std::vector<std::size_t>& assignments) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::size_t c = nearest_index(centroids, points[i]);
        if (c != assignments[i] && assignments[i] < centroids.size() &&
            squared_distance(points[i], centroids[c]) >= squared_distance(points[i], centroids[assignments[i]])) {
            continue;
        }
        if (c != assignments[i]) {
            assignments[i] = c;
            changed = true;
        }
    }
    return changed;
}

void recompute_means(const PointSet& points, const std::vector<std::size_t>& assignments, PointSet& centroids,
                     std::vector<std::size_t>& counts) {
    const std::size_t k = centroids.size();
    const std::size_t dim = points.dim();
    counts.assign(k, 0);
    PointSet sums(k, dim);
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto s = sums[assignments[i]];
        auto p = points[i];
        for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
        ++counts[assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        auto dst = centroids[c];
        auto s = sums[c];
        for (std::size_t d = 0; d < dim; ++d) dst[d] = s[d] / static_cast<double>(counts[c]);
    }
}

// Means, then every empty cluster takes over the point farthest from its
// current centroid (drawn only from clusters that can spare one).
void update_centroids(const PointSet& points, std::vector<std::size_t>& assignments, PointSet& centroids) {
    std::vector<std::size_t> counts;
    recompute_means(points, assignments, centroids, counts);
    bool reseeded = false;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        if (counts[c] != 0) continue;
        std::size_t far = points.size();
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (counts[assignments[i]] < 2) continue;
            const double d = squared_distance(points[i], centroids[assignments[i]]);
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        --counts[assignments[far]];
        assignments[far] = c;
        counts[c] = 1;
        auto dst = centroids[c];
        auto src = points[far];
        std::copy(src.begin(), src.end(), dst.begin());
        reseeded = true;
    }
    if (reseeded) recompute_means(points, assignments, centroids, counts);
}

PointSet kmeanspp_init(const PointSet& points, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = points.size();
    PointSet centroids(points.dim());
    std::size_t first = uniform_index(rng, n);
    centroids.push_back(points[first]);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], points[first]);
    while (centroids.size() < k) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = uniform_index(rng, n);
        } else {
            const double target = unit_uniform(rng) * total;
            double acc = 0.0;
            pick = n;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {
                // rounding pushed target past the last positive weight
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        }
        centroids.push_back(points[pick]);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points[i], points[pick]));
    }
    return centroids;
}

void check_kmeans_args(const PointSet& points, std::size_t k) {
    if (points.empty()) throw Error(ErrorCode::InvalidArgument, "kmeans: empty input");
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "kmeans: k must be at least 1");
    if (k > points.size()) {
        throw Error(ErrorCode::InvalidArgument, "kmeans: k = " + std::to_string(k) + " exceeds " +
                                                    std::to_string(points.size()) + " points");
    }
}

}  // namespace

PointSet PointSet::from_rows(const std::vector<std::vector<double>>& rows) {
    PointSet ps(rows.empty() ? 0 : rows.front().size());
    for (const auto& r : rows) ps.push_back(r);
    return ps;
}

void PointSet::push_back(std::span<const double> row) {
    if (dim_ == 0 && data_.empty()) dim_ = row.size();
    if (row.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "point has " + std::to_string(row.size()) + " dimensions, set holds " + std::to_string(dim_));
    }
    data_.insert(data_.end(), row.begin(), row.end());
}

std::vector<std::vector<double>> PointSet::rows() const {
    std::vector<std::vector<double>> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.emplace_back((*this)[i].begin(), (*this)[i].end());
    return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    check_dims(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double euclidean(std::span<const double> a, std::span<const double> b) { return std::sqrt(squared_distance(a, b)); }

std::vector<std::size_t> ClusterModel::cluster_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t a : assignments) ++sizes.at(a);
    return sizes;
}

double wcss(const PointSet& centroids, const PointSet& points, std::span<const std::size_t> assignments) {
    if (assignments.size() != points.size()) {
        throw Error(ErrorCode::InvalidArgument, "wcss: assignment count does not match point count");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (assignments[i] >= centroids.size()) {
            throw Error(ErrorCode::InvalidArgument, "wcss: assignment index " + std::to_string(assignments[i]) +
                                                        " out of range");
        }
        total += squared_distance(points[i], centroids[assignments[i]]);
    }
    return total;
}

ClusterModel lloyd(const PointSet& points, PointSet centroids, std::size_t max_iter) {
    check_kmeans_args(points, centroids.size());
    if (centroids.dim() != points.dim()) throw Error(ErrorCode::DimensionMismatch, "lloyd: centroid dimension");

    ClusterModel m;
    m.k = centroids.size();
    m.assignments.assign(points.size(), centroids.size());
    assign(points, centroids, m.assignments);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        update_centroids(points, m.assignments, centroids);
        m.wcss_trace.push_back(wcss(centroids, points, m.assignments));
        ++m.iterations;
        if (!assign(points, centroids, m.assignments)) break;
    }
    m.centroids = std::move(centroids);
    m.wcss = wcss(m.centroids, points, m.assignments);
    return m;
}

ClusterModel kmeans(const PointSet& points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
    check_kmeans_args(points, k);
    std::mt19937_64 rng(seed);
    ClusterModel m = lloyd(points, kmeanspp_init(points, k, rng), max_iter);
    m.seed = seed;
    return m;
}

std::uint64_t restart_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

ClusterModel kmeans_best_of(const PointSet& points, std::size_t k, std::uint64_t seed, std::size_t restarts,
                            std::size_t max_iter, Execution exec) {
    check_kmeans_args(points, k);
    if (restarts == 0) restarts = 1;
    std::vector<ClusterModel> runs(restarts);
    if (exec == Execution::Parallel) {
        const auto count = static_cast<std::ptrdiff_t>(restarts);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t r = 0; r < count; ++r) {
            runs[static_cast<std::size_t>(r)] =
                kmeans(points, k, restart_seed(seed, static_cast<std::uint64_t>(r)), max_iter);
        }
    } else {
        for (std::size_t r = 0; r < restarts; ++r) runs[r] = kmeans(points, k, restart_seed(seed, r), max_iter);
    }
    std::size_t best = 0;
    for (std::size_t r = 1; r < restarts; ++r) {
        if (runs[r].wcss < runs[best].wcss) best = r;
    }
    return std::move(runs[best]);
}

ElbowReport choose_k_elbow(const PointSet& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                           const ElbowOptions& options) {
    if (k_min < 1 || k_min > k_max || k_max > points.size()) {
        throw Error(ErrorCode::InvalidArgument, "elbow: need 1 <= k_min <= k_max <= |points|, got [" +
                                                    std::to_string(k_min) + ", " + std::to_string(k_max) + "] for " +
                                                    std::to_string(points.size()) + " points");
    }
    ElbowReport report;
    report.k_min = k_min;
    report.k_max = k_max;
    for (std::size_t k = k_min; k <= k_max; ++k) {
        ClusterModel best =
            kmeans_best_of(points, k, restart_seed(seed, 1000 + k), options.restarts, options.max_iter, options.exec);
        if (k > k_min) {
            // Warm start: previous best plus its worst-served point. Lloyd
            // never increases the objective, so the curve stays monotone.
            const ClusterModel& prev = report.models.back();
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                const double d = squared_distance(points[i], prev.centroids[prev.assignments[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            PointSet init = prev.centroids;
            init.push_back(points[far]);
            ClusterModel warm = lloyd(points, std::move(init), options.max_iter);
            warm.seed = prev.seed;
            if (warm.wcss < best.wcss) best = std::move(warm);
        }
        report.curve.push_back({k, best.wcss, std::nullopt});
        report.models.push_back(std::move(best));
    }

    report.chosen_k = k_min;
    if (report.curve.size() < 3) return report;

    double best_second = 0.0;
    for (std::size_t i = 1; i + 1 < report.curve.size(); ++i) {
        const double d2 = report.curve[i - 1].wcss - 2.0 * report.curve[i].wcss + report.curve[i + 1].wcss;
        report.curve[i].second_difference = d2;
        if (d2 > best_second) {
            best_second = d2;
            report.chosen_k = report.curve[i].k;
        }
    }
    // Curves flat up to rounding noise keep k_min. The noise floor follows the
    // magnitude of the coordinates, since a zero-scatter input has wcss ~ 0.
    double magnitude = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (double x : points[i]) magnitude += x * x;
    if (best_second <= 1e-12 * std::max({report.curve.front().wcss, magnitude, 1e-300})) report.chosen_k = k_min;
    return report;
}

NearestCentroid nearest_centroid(const PointSet& centroids, std::span<const double> point) {
    if (centroids.empty()) throw Error(ErrorCode::InvalidArgument, "nearest_centroid: no centroids");
    check_dims(centroids[0], point);
    const std::size_t idx = nearest_index(centroids, point);
    return {idx, euclidean(centroids[idx], point)};
}

}  // namespace keydyn
