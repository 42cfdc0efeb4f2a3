#include "mop/metrics.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <mutex>
#include <sstream>

#include "mop/error.hpp"
#include "mop/kmeans.hpp"
#include "mop/parallel.hpp"
#include "mop/random.hpp"

namespace mop {

namespace {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EMatrix> view(const Matrix& m) {
    return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

void check_pair(const Matrix& x, const Matrix& y, const char* what) {
    if (x.rows() < 2 || y.rows() < 2) throw ValidationError(std::string(what) + " needs at least 2 samples per set");
    if (x.cols() != y.cols()) throw ValidationError(std::string(what) + ": sets differ in dimension");
}

Eigen::MatrixXd covariance(const EMatrix& centered) {
    return (centered.transpose() * centered) / static_cast<double>(centered.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double kl(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > 0.0) s += a[i] * std::log(a[i] / b[i]);
    }
    return std::max(0.0, s);
}

}  // namespace

double fid(const Matrix& xm, const Matrix& ym) {
    check_pair(xm, ym, "FID");
    const auto x = view(xm);
    const auto y = view(ym);
    const Eigen::RowVectorXd mu_x = x.colwise().mean();
    const Eigen::RowVectorXd mu_y = y.colwise().mean();
    const Eigen::MatrixXd sx = covariance(x.rowwise() - mu_x);
    const Eigen::MatrixXd sy = covariance(y.rowwise() - mu_y);
    // tr((Sx Sy)^{1/2}) = tr((Sx^{1/2} Sy Sx^{1/2})^{1/2}), a symmetric PSD matrix.
    const Eigen::MatrixXd root_x = psd_sqrt(sx);
    Eigen::MatrixXd inner = root_x * sy * root_x;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (mu_x - mu_y).squaredNorm() + sx.trace() + sy.trace() - 2.0 * tr_cross;
    return std::max(0.0, value);
}

MauveResult mauve_from_histograms(const std::vector<double>& p, const std::vector<double>& q, double scaling,
                                  std::size_t grid) {
    if (p.size() != q.size() || p.size() < 2) throw ValidationError("MAUVE histograms need at least 2 matching bins");
    if (grid == 0) throw ValidationError("MAUVE grid must be non-empty");
    if (!(scaling > 0.0)) throw ValidationError("MAUVE scaling must be positive");
    MauveResult out;
    out.p = p;
    out.q = q;
    std::vector<double> r(p.size());
    for (std::size_t i = 1; i <= grid; ++i) {
        const double lambda = static_cast<double>(i) / static_cast<double>(grid + 1);
        for (std::size_t b = 0; b < p.size(); ++b) r[b] = lambda * p[b] + (1.0 - lambda) * q[b];
        out.frontier.push_back({lambda, std::exp(-scaling * kl(q, r)), std::exp(-scaling * kl(p, r))});
    }
    std::vector<std::pair<double, double>> pts = {{0.0, 1.0}, {1.0, 0.0}};
    for (const auto& f : out.frontier) pts.emplace_back(f.x, f.y);
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second > b.second;
    });
    // Monotone upper envelope: y at x is the best y reachable at any x' >= x.
    for (std::size_t i = pts.size() - 1; i-- > 0;) pts[i].second = std::max(pts[i].second, pts[i + 1].second);
    double area = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        area += (pts[i].first - pts[i - 1].first) * 0.5 * (pts[i].second + pts[i - 1].second);
    }
    out.score = std::clamp(area, 0.0, 1.0);
    return out;
}

MauveResult mauve(const Matrix& x, const Matrix& y, const MauveOptions& options) {
    check_pair(x, y, "MAUVE");
    std::size_t k = options.clusters;
    const std::size_t smaller = std::min(x.rows(), y.rows());
    if (smaller * 10 < k) {
        k = smaller / 2;
        spdlog::info("MAUVE: {} samples per set is too few for {} clusters; using {}", smaller, options.clusters, k);
    }
    if (k < 2) throw ValidationError("MAUVE: degenerate clustering (fewer than 2 clusters)");

    Matrix joint(x.rows() + y.rows(), x.cols());
    std::copy(x.data().begin(), x.data().end(), joint.data().begin());
    std::copy(y.data().begin(), y.data().end(), joint.data().begin() + static_cast<std::ptrdiff_t>(x.size()));
    const ClusterAssignment a = kmeans(joint, k, options.seed);

    std::vector<double> p(k, 0.0), q(k, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) p[a.assignments[i]] += 1.0 / static_cast<double>(x.rows());
    for (std::size_t i = 0; i < y.rows(); ++i) q[a.assignments[x.rows() + i]] += 1.0 / static_cast<double>(y.rows());
    MauveResult out = mauve_from_histograms(p, q, options.scaling, options.grid);
    out.clusters_used = k;
    return out;
}

std::vector<double> cosine_histogram(const Matrix& x, const KlCosineOptions& options) {
    if (x.rows() < 2) throw ValidationError("KL-cosine needs at least 2 samples per set");
    if (options.bins == 0) throw ValidationError("KL-cosine needs at least one bin");
    const std::size_t n = x.rows(), bins = options.bins;
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) norms[i] = std::sqrt(dot(x.row(i), x.row(i)));
    auto bin_of = [&](std::size_t i, std::size_t j) {
        const double denom = norms[i] * norms[j];
        const double s = denom > 0.0 ? std::clamp(dot(x.row(i), x.row(j)) / denom, -1.0, 1.0) : 0.0;
        return std::min(bins - 1, static_cast<std::size_t>((s + 1.0) * 0.5 * static_cast<double>(bins)));
    };

    std::vector<std::uint64_t> counts(bins, 0);
    std::mutex mu;
    if (n <= options.max_rows) {
        parallel_for(n, [&](std::size_t i) {
            std::vector<std::uint64_t> local(bins, 0);
            for (std::size_t j = i + 1; j < n; ++j) ++local[bin_of(i, j)];
            std::lock_guard lock(mu);
            for (std::size_t b = 0; b < bins; ++b) counts[b] += local[b];
        }, 16);
    } else {
        spdlog::info("KL-cosine: {} rows; subsampling {} pairs", n, options.pair_budget);
        Rng rng(derive_seed(options.seed, 0xc05));
        for (std::size_t s = 0; s < options.pair_budget; ++s) {
            const std::size_t i = rng.below(n);
            std::size_t j = rng.below(n - 1);
            if (j >= i) ++j;
            ++counts[bin_of(i, j)];
        }
    }
    double total = 0.0;
    for (auto c : counts) total += static_cast<double>(c);
    std::vector<double> h(bins);
    for (std::size_t b = 0; b < bins; ++b) h[b] = static_cast<double>(counts[b]) / total;
    return h;
}

KlCosineResult kl_cosine(const Matrix& x, const Matrix& y, const KlCosineOptions& options) {
    check_pair(x, y, "KL-cosine");
    if (!(options.epsilon >= 0.0)) throw ValidationError("KL-cosine smoothing must be >= 0");
    KlCosineResult out;
    out.p = cosine_histogram(x, options);
    out.q = cosine_histogram(y, options);
    const double norm = 1.0 + static_cast<double>(options.bins) * options.epsilon;
    for (auto* h : {&out.p, &out.q}) {
        for (double& v : *h) v = (v + options.epsilon) / norm;
    }
    out.value = kl(out.p, out.q);
    return out;
}

Evaluation evaluate_corpora(const std::vector<std::string>& generated, const std::vector<std::string>& golden,
                            const Embedder& embedder, const MauveOptions& mauve_options,
                            const KlCosineOptions& kl_options) {
    const Matrix x = embedder.embed_batch(generated);
    const Matrix y = embedder.embed_batch(golden);
    Evaluation e;
    e.mauve = mauve(x, y, mauve_options);
    e.kl = kl_cosine(x, y, kl_options);
    e.report.fid = fid(x, y);
    e.report.mauve = e.mauve.score;
    e.report.kl_cosine = e.kl.value;
    e.report.n_generated = generated.size();
    e.report.n_golden = golden.size();
    e.report.embedder = embedder.fingerprint();
    e.report.mauve_options = mauve_options;
    e.report.mauve_clusters_used = e.mauve.clusters_used;
    e.report.kl_options = kl_options;
    return e;
}

std::string serialize_report(const EvalReport& r) {
    nlohmann::ordered_json o;
    o["fid"] = r.fid;
    o["mauve"] = r.mauve;
    o["kl_cosine"] = r.kl_cosine;
    o["n_generated"] = r.n_generated;
    o["n_golden"] = r.n_golden;
    o["embedder"] = r.embedder.str();
    o["config"] = {
        {"mauve", {{"clusters", r.mauve_options.clusters}, {"clusters_used", r.mauve_clusters_used},
                   {"scaling", r.mauve_options.scaling}, {"grid", r.mauve_options.grid}, {"seed", r.mauve_options.seed}}},
        {"kl_cosine", {{"bins", r.kl_options.bins}, {"epsilon", r.kl_options.epsilon},
                       {"max_rows", r.kl_options.max_rows}, {"pair_budget", r.kl_options.pair_budget},
                       {"seed", r.kl_options.seed}}}};
    return o.dump(2) + "\n";
}

std::string histogram_csv(const KlCosineResult& kl) {
    std::ostringstream os;
    os.precision(17);
    os << "bin,lo,hi,p,q\n";
    const double width = 2.0 / static_cast<double>(kl.p.size());
    for (std::size_t b = 0; b < kl.p.size(); ++b) {
        os << b << ',' << -1.0 + width * static_cast<double>(b) << ',' << -1.0 + width * static_cast<double>(b + 1)
           << ',' << kl.p[b] << ',' << kl.q[b] << '\n';
    }
    return os.str();
}

std::string frontier_csv(const MauveResult& m) {
    std::ostringstream os;
    os.precision(17);
    os << "lambda,x,y\n";
    for (const auto& f : m.frontier) os << f.lambda << ',' << f.x << ',' << f.y << '\n';
    return os.str();
}

}  // namespace mop
