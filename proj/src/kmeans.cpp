#include "mop/kmeans.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mop/error.hpp"
#include "mop/parallel.hpp"
#include "mop/random.hpp"

namespace mop {

std::vector<std::size_t> ClusterAssignment::sizes() const {
    std::vector<std::size_t> s(centroids.rows(), 0);
    for (auto a : assignments) ++s[a];
    return s;
}

namespace {

double sqdist(std::span<const double> a, std::span<const double> b) {
    return simd::squared_distance(a.data(), b.data(), a.size());
}

Matrix seed_centroids(const Matrix& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows();
    Matrix c(k, x.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<bool> chosen(n, false);
    std::size_t pick = rng.below(n);
    for (std::size_t i = 0; i < k; ++i) {
        chosen[pick] = true;
        std::copy(x.row(pick).begin(), x.row(pick).end(), c.row(i).begin());
        if (i + 1 == k) break;
        double total = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            d2[p] = std::min(d2[p], sqdist(x.row(p), c.row(i)));
            total += d2[p];
        }
        if (total > 0.0) {
            pick = rng.categorical(d2);
        } else {
            // Every point coincides with a centroid; take the first unused row.
            pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
        }
    }
    return c;
}

}  // namespace

namespace {

ClusterAssignment lloyd(const Matrix& x, std::size_t k, Rng& rng, const KMeansOptions& options) {
    const std::size_t n = x.rows();

    ClusterAssignment a;
    a.centroids = seed_centroids(x, k, rng);
    a.assignments.assign(n, 0);
    std::vector<double> dist(n);

    for (std::size_t it = 0; it < std::max<std::size_t>(1, options.max_iters); ++it) {
        a.iterations = it + 1;
        parallel_for(n, [&](std::size_t p) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sqdist(x.row(p), a.centroids.row(c));
                if (d < best) {
                    best = d;
                    arg = c;
                }
            }
            a.assignments[p] = arg;
            dist[p] = best;
        });

        auto sizes = a.sizes();
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] != 0) continue;
            std::size_t far = n;
            for (std::size_t p = 0; p < n; ++p) {
                if (sizes[a.assignments[p]] > 1 && (far == n || dist[p] > dist[far])) far = p;
            }
            --sizes[a.assignments[far]];
            a.assignments[far] = c;
            ++sizes[c];
            dist[far] = 0.0;
            std::copy(x.row(far).begin(), x.row(far).end(), a.centroids.row(c).begin());
            spdlog::debug("k-means: repaired empty cluster {} with point {}", c, far);
        }
        double inertia = 0.0;
        for (double d : dist) inertia += d;
        a.inertia_history.push_back(inertia);

        Matrix next(k, x.cols());
        for (std::size_t p = 0; p < n; ++p) {
            simd::axpy(1.0, x.row(p).data(), next.row(a.assignments[p]).data(), x.cols());
        }
        double moved = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double inv = 1.0 / static_cast<double>(sizes[c]);
            for (double& v : next.row(c)) v *= inv;
            moved = std::max(moved, std::sqrt(sqdist(next.row(c), a.centroids.row(c))));
        }
        a.centroids = std::move(next);
        if (moved < options.tolerance) break;
    }

    a.inertia = 0.0;
    for (std::size_t p = 0; p < n; ++p) a.inertia += sqdist(x.row(p), a.centroids.row(a.assignments[p]));
    a.inertia_history.push_back(a.inertia);
    return a;
}

}  // namespace

ClusterAssignment kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
    if (k == 0) throw ValidationError("k-means needs K >= 1");
    if (k > x.rows()) throw ValidationError("K=" + std::to_string(k) + " exceeds the " + std::to_string(x.rows()) + " points");
    ClusterAssignment best;
    for (std::size_t r = 0; r < std::max<std::size_t>(1, options.restarts); ++r) {
        Rng rng(derive_seed(seed, 0x6b6d + r));
        ClusterAssignment a = lloyd(x, k, rng, options);
        if (r == 0 || a.inertia < best.inertia) best = std::move(a);
    }
    return best;
}

std::vector<std::size_t> nearest_to_centroid(const Matrix& points, const ClusterAssignment& a, std::size_t c,
                                             std::size_t r) {
    std::vector<std::pair<double, std::size_t>> members;
    for (std::size_t p = 0; p < a.assignments.size(); ++p) {
        if (a.assignments[p] == c) members.emplace_back(sqdist(points.row(p), a.centroids.row(c)), p);
    }
    std::sort(members.begin(), members.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(r, members.size()); ++i) out.push_back(members[i].second);
    return out;
}

}  // namespace mop
