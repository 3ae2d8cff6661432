#include "luq/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "luq/rng.hpp"

namespace luq {

Mat pool_tokens(const ActivationSet& acts, int64_t layer) {
    if (layer < 0 || layer >= acts.num_layers())
        throw ValidationError("pool_tokens: layer index out of range");
    const auto& seqs = acts.acts[static_cast<size_t>(layer)];
    if (seqs.empty()) throw ValidationError("pool_tokens: no sequences");
    int64_t n = seqs[0].rows(), d = seqs[0].cols();
    Mat out(static_cast<int64_t>(seqs.size()) * n, d);
    int64_t row = 0;
    for (const auto& s : seqs) {
        out.middleRows(row, s.rows()) = s;
        row += s.rows();
    }
    return out;
}

namespace {

double sq_dist(const Mat& a, int64_t i, const Mat& b, int64_t j) {
    return static_cast<double>((a.row(i) - b.row(j)).squaredNorm());
}

}  // namespace

ClusterModel kmeans_fit(const Mat& tokens, int64_t k, uint64_t seed) {
    int64_t m = tokens.rows(), d = tokens.cols();
    if (k < 1) throw ValidationError("kmeans_fit: K must be >= 1");
    if (m < k) throw ValidationError("kmeans_fit: fewer points than clusters");

    Rng rng(seed);
    ClusterModel model;
    model.k = k;
    model.seed = seed;
    model.centroids.resize(k, d);

    // kmeans++ seeding
    std::vector<double> d2(static_cast<size_t>(m), 0.0);
    int64_t first = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(m)));
    model.centroids.row(0) = tokens.row(first);
    for (int64_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int64_t cc = 0; cc < c; ++cc)
                best = std::min(best, sq_dist(tokens, i, model.centroids, cc));
            d2[static_cast<size_t>(i)] = best;
            total += best;
        }
        int64_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total, acc = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                acc += d2[static_cast<size_t>(i)];
                if (acc >= r) { pick = i; break; }
            }
        } else {
            pick = static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(m)));
        }
        model.centroids.row(c) = tokens.row(pick);
    }

    constexpr int64_t kMaxIters = 100;
    constexpr double kMoveTol = 1e-4;
    std::vector<int64_t> labels(static_cast<size_t>(m));
    for (int64_t iter = 0; iter < kMaxIters; ++iter) {
        model.iterations = iter + 1;

        double inertia = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::max();
            int64_t bj = 0;
            for (int64_t j = 0; j < k; ++j) {
                double dd = sq_dist(tokens, i, model.centroids, j);
                if (dd < best) { best = dd; bj = j; }
            }
            labels[static_cast<size_t>(i)] = bj;
            inertia += best;
        }
        model.inertia = inertia;

        Mat next = Mat::Zero(k, d);
        std::vector<int64_t> counts(static_cast<size_t>(k), 0);
        for (int64_t i = 0; i < m; ++i) {
            next.row(labels[static_cast<size_t>(i)]) += tokens.row(i);
            counts[static_cast<size_t>(labels[static_cast<size_t>(i)])]++;
        }
        for (int64_t j = 0; j < k; ++j) {
            if (counts[static_cast<size_t>(j)] > 0) {
                next.row(j) /= static_cast<float>(counts[static_cast<size_t>(j)]);
            } else {
                // reseed to the current farthest point
                double worst = -1.0;
                int64_t pick = 0;
                for (int64_t i = 0; i < m; ++i) {
                    double dd = sq_dist(tokens, i, model.centroids,
                                        labels[static_cast<size_t>(i)]);
                    if (dd > worst) { worst = dd; pick = i; }
                }
                next.row(j) = tokens.row(pick);
            }
        }

        double move = 0.0, scale = 0.0;
        for (int64_t j = 0; j < k; ++j) {
            move += static_cast<double>((next.row(j) - model.centroids.row(j)).norm());
            scale += static_cast<double>(model.centroids.row(j).norm());
        }
        model.centroids = next;
        if (move <= kMoveTol * std::max(scale, 1e-12)) break;
    }

    // final inertia against converged centroids
    auto final_labels = assign(model, tokens);
    double inertia = 0.0;
    for (int64_t i = 0; i < m; ++i)
        inertia += sq_dist(tokens, i, model.centroids, final_labels[static_cast<size_t>(i)]);
    model.inertia = inertia;
    return model;
}

std::vector<int64_t> assign(const ClusterModel& model, const Mat& tokens) {
    if (tokens.cols() != model.centroids.cols())
        throw ValidationError("assign: token width != centroid width");
    std::vector<int64_t> out(static_cast<size_t>(tokens.rows()));
    for (int64_t i = 0; i < tokens.rows(); ++i) {
        double best = std::numeric_limits<double>::max();
        int64_t bj = 0;
        for (int64_t j = 0; j < model.k; ++j) {
            double dd = sq_dist(tokens, i, model.centroids, j);
            if (dd < best) { best = dd; bj = j; }  // strict: ties keep lowest index
        }
        out[static_cast<size_t>(i)] = bj;
    }
    return out;
}

std::vector<double> empirical_distribution(const std::vector<int64_t>& assignments,
                                           int64_t k) {
    if (assignments.empty()) throw ValidationError("empirical_distribution: no assignments");
    std::vector<double> p(static_cast<size_t>(k), 0.0);
    for (int64_t a : assignments) {
        if (a < 0 || a >= k) throw ValidationError("empirical_distribution: id out of range");
        p[static_cast<size_t>(a)] += 1.0;
    }
    for (auto& v : p) v /= static_cast<double>(assignments.size());
    return p;
}

double shannon_entropy(const std::vector<double>& p) {
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw ValidationError("shannon_entropy: negative mass");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ValidationError("shannon_entropy: distribution does not sum to 1");
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

std::vector<int64_t> ascending_order(const std::vector<double>& values) {
    std::vector<int64_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return values[static_cast<size_t>(a)] < values[static_cast<size_t>(b)];
    });
    return idx;
}

EntropyProfile layer_entropy_profile(const ActivationSet& acts, int64_t k, uint64_t seed) {
    EntropyProfile prof;
    prof.k = k;
    prof.seed = seed;
    int64_t L = acts.num_layers();
    for (int64_t li = 0; li < L; ++li) {
        Mat tokens = pool_tokens(acts, li);
        // one shared seed: identical layer activations must yield identical
        // entropies so that ties resolve to the identity ordering
        ClusterModel model = kmeans_fit(tokens, k, seed);
        auto labels = assign(model, tokens);
        prof.h.push_back(shannon_entropy(empirical_distribution(labels, k)));
    }
    prof.pi = ascending_order(prof.h);
    return prof;
}

double kendall_distance(const std::vector<int64_t>& rank_a,
                        const std::vector<int64_t>& rank_b) {
    size_t n = rank_a.size();
    if (n != rank_b.size()) throw ValidationError("kendall_distance: length mismatch");
    if (n < 2) throw ValidationError("kendall_distance: need >= 2 items");

    // position of each item in each ordering
    std::vector<int64_t> pa(n, -1), pb(n, -1);
    for (size_t i = 0; i < n; ++i) {
        int64_t a = rank_a[i], b = rank_b[i];
        if (a < 0 || a >= static_cast<int64_t>(n) || pa[static_cast<size_t>(a)] != -1 ||
            b < 0 || b >= static_cast<int64_t>(n) || pb[static_cast<size_t>(b)] != -1)
            throw ValidationError("kendall_distance: inputs must be permutations");
        pa[static_cast<size_t>(a)] = static_cast<int64_t>(i);
        pb[static_cast<size_t>(b)] = static_cast<int64_t>(i);
    }

    int64_t discordant = 0;
    for (size_t x = 0; x < n; ++x)
        for (size_t y = x + 1; y < n; ++y) {
            bool oa = pa[x] < pa[y], ob = pb[x] < pb[y];
            if (oa != ob) ++discordant;
        }
    double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    return static_cast<double>(discordant) / pairs;
}

StabilityCurve rank_stability_curve(const ActivationSet& acts,
                                    const std::vector<int64_t>& k_grid, uint64_t seed) {
    if (k_grid.empty()) throw ValidationError("rank_stability_curve: empty grid");
    for (size_t i = 1; i < k_grid.size(); ++i)
        if (k_grid[i] <= k_grid[i - 1])
            throw ValidationError("rank_stability_curve: grid must be ascending");

    StabilityCurve curve;
    curve.grid = k_grid;

    std::vector<std::vector<int64_t>> orderings;
    for (int64_t k : k_grid)
        orderings.push_back(layer_entropy_profile(acts, k, seed).pi);
    for (size_t i = 1; i < orderings.size(); ++i)
        curve.distances.push_back(kendall_distance(orderings[i - 1], orderings[i]));

    if (curve.distances.size() < 3)
        throw ValidationError("rank_stability_curve: grid too small for knee selection");
    std::vector<double> xs, ys;
    for (size_t i = 1; i < k_grid.size(); ++i)
        xs.push_back(static_cast<double>(k_grid[i]));
    ys = curve.distances;
    KneedleResult knee = kneedle_elbow(xs, ys);
    curve.selected_k = static_cast<int64_t>(std::llround(knee.x));
    curve.knee_found = knee.knee_found;
    return curve;
}

KneedleResult kneedle_elbow(const std::vector<double>& xs, const std::vector<double>& ys) {
    size_t n = xs.size();
    if (n < 3 || ys.size() != n) throw ValidationError("kneedle_elbow: need >= 3 points");

    double xmin = xs.front(), xmax = xs.back();
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    KneedleResult res;
    res.x = xs.back();
    if (ymax - ymin <= 0.0 || xmax - xmin <= 0.0) return res;  // flat: no knee

    double best = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double xn = (xs[i] - xmin) / (xmax - xmin);
        double yn = (ys[i] - ymin) / (ymax - ymin);
        double diff = (1.0 - yn) - xn;
        if (diff > best + 1e-12) {
            best = diff;
            res.x = xs[i];
            res.knee_found = true;
        }
    }
    if (!res.knee_found) res.x = xs.back();
    return res;
}

}  // namespace luq
