#pragma once
// Embedding-space comparisons of a generated corpus against a golden one.
#include <cstdint>
#include <string>
#include <vector>

#include "mop/embedder.hpp"
#include "mop/matrix.hpp"

namespace mop {

/// Frechet distance between Gaussian fits of the rows of x and y (covariances use n - 1).
double fid(const Matrix& x, const Matrix& y);

struct MauveOptions {
    std::size_t clusters = 500;
    double scaling = 1.0;  // c
    std::size_t grid = 100;
    std::uint64_t seed = 0;
};

struct FrontierPoint {
    double lambda;
    double x;  // exp(-c KL(Q || R))
    double y;  // exp(-c KL(P || R))
};

struct MauveResult {
    double score = 0.0;
    std::size_t clusters_used = 0;
    std::vector<double> p;  // cluster histogram of x
    std::vector<double> q;  // cluster histogram of y
    std::vector<FrontierPoint> frontier;
};

/// Quantized MAUVE from histograms: area under the monotone divergence frontier,
/// endpoints (0, 1) and (1, 0) included, trapezoid rule, clipped to [0, 1].
MauveResult mauve_from_histograms(const std::vector<double>& p, const std::vector<double>& q, double scaling,
                                  std::size_t grid);
/// Joint k-means over x and y, then mauve_from_histograms.
MauveResult mauve(const Matrix& x, const Matrix& y, const MauveOptions& options = {});

struct KlCosineOptions {
    std::size_t bins = 100;
    double epsilon = 1e-8;
    /// Above this many rows, pairs are subsampled to `pair_budget`.
    std::size_t max_rows = 20000;
    std::size_t pair_budget = 20'000'000;
    std::uint64_t seed = 0;
};

struct KlCosineResult {
    double value = 0.0;
    std::vector<double> p;  // smoothed, method
    std::vector<double> q;  // smoothed, golden
};

/// Histogram of pairwise cosine similarities (i < j) over [-1, 1], normalized.
std::vector<double> cosine_histogram(const Matrix& x, const KlCosineOptions& options);
/// KL(P || Q) with P from x (method) and Q from y (golden), both smoothed by epsilon.
KlCosineResult kl_cosine(const Matrix& x, const Matrix& y, const KlCosineOptions& options = {});

struct EvalReport {
    double fid = 0.0;
    double mauve = 0.0;
    double kl_cosine = 0.0;
    std::size_t n_generated = 0;
    std::size_t n_golden = 0;
    EmbedderFingerprint embedder;
    MauveOptions mauve_options;
    std::size_t mauve_clusters_used = 0;
    KlCosineOptions kl_options;
};

struct Evaluation {
    EvalReport report;
    MauveResult mauve;
    KlCosineResult kl;
};

Evaluation evaluate_corpora(const std::vector<std::string>& generated, const std::vector<std::string>& golden,
                            const Embedder& embedder, const MauveOptions& mauve_options = {},
                            const KlCosineOptions& kl_options = {});

std::string serialize_report(const EvalReport& r);
/// bin,lo,hi,p,q
std::string histogram_csv(const KlCosineResult& kl);
/// lambda,x,y
std::string frontier_csv(const MauveResult& m);

}  // namespace mop
