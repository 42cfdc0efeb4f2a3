#pragma once
#include <cstdint>
#include <vector>

#include "mop/matrix.hpp"

namespace mop {

struct KMeansOptions {
    std::size_t max_iters = 100;
    /// Stop once no centroid moves farther than this (Euclidean).
    double tolerance = 1e-6;
    /// Independent k-means++ runs; the lowest final inertia wins (earliest on ties).
    std::size_t restarts = 1;
};

struct ClusterAssignment {
    std::vector<std::size_t> assignments;  // row -> cluster
    Matrix centroids;                      // K x d, the means of their members
    double inertia = 0.0;                  // sum of squared distances to assigned centroids
    /// Inertia after each assignment step, then the final value; non-increasing up to rounding.
    std::vector<double> inertia_history;
    std::size_t iterations = 0;

    std::vector<std::size_t> sizes() const;
};

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs. Empty clusters are repaired by
/// moving in the point farthest from its centroid. Ties go to the lower cluster id.
ClusterAssignment kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Indices of the `r` rows of cluster `c` nearest to its centroid, nearest first
/// (ties by row index).
std::vector<std::size_t> nearest_to_centroid(const Matrix& points, const ClusterAssignment& a, std::size_t c,
                                             std::size_t r);

}  // namespace mop
